use nbv_core::{Cell, LocalMap, VoxelState};
use nbv_models::{encode_map, one_hot_image, COND_DIM, MAP_CELLS};
use proptest::prelude::*;

fn state(v: u8) -> VoxelState {
    VoxelState::from_u8(v).unwrap()
}

/// Window state by rule: any occupied cell wins, then any unknown cell.
fn oracle_window(cells: &[u8], px: usize, py: usize) -> usize {
    let window: Vec<u8> = (py * 5..py * 5 + 5)
        .flat_map(|y| (px * 5..px * 5 + 5).map(move |x| cells[y * MAP_CELLS + x]))
        .collect();
    if window.contains(&1) {
        1
    } else if window.contains(&2) {
        2
    } else {
        0
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pooled_states_follow_priority(
        raw in proptest::collection::vec(prop_oneof![8 => Just(0u8), 1 => Just(1u8), 2 => Just(2u8)], MAP_CELLS * MAP_CELLS),
        yaw in -std::f64::consts::PI..std::f64::consts::PI,
    ) {
        let local = LocalMap::from_cells(MAP_CELLS, 0.2, Cell::new(0, 0), raw.iter().map(|&v| state(v)).collect(), yaw);
        let enc: Vec<f64> = encode_map(&local).unwrap();
        prop_assert_eq!(enc.len(), COND_DIM);
        for py in 0..10 {
            for px in 0..10 {
                let k = py * 10 + px;
                let one_hot = &enc[k * 3..k * 3 + 3];
                prop_assert_eq!(one_hot.iter().sum::<f64>(), 1.0);
                prop_assert_eq!(one_hot[oracle_window(&raw, px, py)], 1.0);
            }
        }
        prop_assert!((enc[300].hypot(enc[301]) - 1.0).abs() < 1e-6);

        let img: Vec<f32> = one_hot_image(&local).unwrap();
        let n = MAP_CELLS * MAP_CELLS;
        for (i, &v) in raw.iter().enumerate() {
            prop_assert_eq!(img[v as usize * n + i], 1.0);
            prop_assert_eq!(img[i] + img[n + i] + img[2 * n + i], 1.0);
        }
    }
}
