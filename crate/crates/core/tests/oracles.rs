mod support;

use std::collections::HashSet;
use std::f64::consts::{FRAC_PI_2, PI};
use std::sync::Arc;

use nbv_core::grid_world::generate_world;
use nbv_core::planning::{
    compute_gain, frontier_cells, local_distance_field, optimize_orientation, plan_step, reachable_path,
    sample_uniform, select_nbv, Candidate, CandidateSource, InflationKernel, PlanError, PlannerConfig, PlannerModels,
    PlannerState, TraversabilityMap,
};
use nbv_core::sim::{extract_local_map, path_length, raycast};
use nbv_core::{
    Cell, GridView, LocalMap, OccupancyGrid, Pose, RobotModel, SensorModel, SimConfig, SimState, VoxelState,
    WorldGenParams,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const RES: f64 = 0.2;
const N: usize = 50;

fn local(cells: Vec<VoxelState>) -> LocalMap {
    LocalMap::from_cells(N, RES, Cell::new(0, 0), cells, 0.0)
}

/// Random local map: scattered obstacles, a random unknown half-plane and
/// unknown speckle.
fn random_local(rng: &mut ChaCha8Rng) -> LocalMap {
    let theta: f64 = rng.random_range(-PI..PI);
    let offset: f64 = rng.random_range(-15.0..15.0);
    let p_occ = rng.random_range(0.0..0.15);
    let cells = (0..N * N)
        .map(|i| {
            let (x, y) = ((i % N) as f64 - 25.0, (i / N) as f64 - 25.0);
            if rng.random_bool(p_occ) {
                VoxelState::Occupied
            } else if x * theta.cos() + y * theta.sin() > offset || rng.random_bool(0.03) {
                VoxelState::Unknown
            } else {
                VoxelState::Free
            }
        })
        .collect();
    local(cells)
}

#[test]
fn compute_gain_equals_exhaustive_line_of_sight_count() {
    let sensor = SensorModel::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut checked = 0;
    let mut positive = 0;
    while checked < 150 {
        let map = random_local(&mut rng);
        let free: Vec<usize> = (0..N * N).filter(|&i| map.cells()[i] == VoxelState::Free).collect();
        if free.is_empty() {
            continue;
        }
        for _ in 0..3 {
            let i = free[rng.random_range(0..free.len())];
            let c = map.cell_center(Cell::new((i % N) as i32, (i / N) as i32));
            let yaw = if rng.random_bool(0.25) {
                // Bin-aligned headings put bearings exactly on the FoV edge.
                (rng.random_range(0..16) as f64 * PI / 8.0 + PI) % (2.0 * PI) - PI
            } else {
                rng.random_range(-PI..PI)
            };
            let pose = Pose::new(c[0], c[1], yaw);
            let expected = support::gain(&map, &pose, &sensor);
            assert_eq!(compute_gain(&map, &pose, &sensor).unwrap(), expected, "pose {pose:?}");
            positive += usize::from(expected > 0);
            checked += 1;
        }
    }
    assert!(positive > 50, "too few informative poses ({positive})");
}

#[test]
fn occluding_wall_reduces_gain() {
    let sensor = SensorModel::default();
    let open = local(
        (0..N * N)
            .map(|i| {
                if i % N > 30 {
                    VoxelState::Unknown
                } else {
                    VoxelState::Free
                }
            })
            .collect(),
    );
    let mut walled = open.clone();
    for y in 20..30 {
        walled.set(Cell::new(28, y), VoxelState::Occupied);
    }
    let c = open.cell_center(Cell::new(25, 25));
    let pose = Pose::new(c[0], c[1], 0.0);
    let (a, b) = (
        compute_gain(&open, &pose, &sensor).unwrap(),
        compute_gain(&walled, &pose, &sensor).unwrap(),
    );
    assert_eq!(a, support::gain(&open, &pose, &sensor));
    assert_eq!(b, support::gain(&walled, &pose, &sensor));
    assert!(b < a, "{b} !< {a}");
}

#[test]
fn orientation_optimization_matches_exhaustive_bins() {
    let sensor = SensorModel::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let map = random_local(&mut rng);
        let free: Vec<usize> = (0..N * N).filter(|&i| map.cells()[i] == VoxelState::Free).collect();
        let i = free[rng.random_range(0..free.len())];
        let cell = Cell::new((i % N) as i32, (i / N) as i32);
        let (yaw, g) = optimize_orientation(&map, map.cell_center(cell), &sensor, 16).unwrap();
        let (oyaw, og) = support::best_orientation(&map, cell, &sensor, 16);
        assert_eq!((yaw, g), (oyaw, og));
    }
    // Unknown only in +x: the bin at zero heading wins.
    let east = local(
        (0..N * N)
            .map(|i| {
                if i % N > 30 {
                    VoxelState::Unknown
                } else {
                    VoxelState::Free
                }
            })
            .collect(),
    );
    let (yaw, _) = optimize_orientation(&east, east.cell_center(Cell::new(25, 25)), &sensor, 16).unwrap();
    assert_eq!(yaw, 0.0);
}

fn random_grid(rng: &mut ChaCha8Rng, w: usize, h: usize) -> OccupancyGrid {
    let mut g = OccupancyGrid::filled(
        w,
        h,
        RES,
        [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)],
        VoxelState::Free,
    );
    let p = rng.random_range(0.0..0.2);
    for i in 0..w * h {
        let r: f64 = rng.random();
        if r < p {
            g.set(g.cell_at(i), VoxelState::Occupied);
        } else if r < p + 0.1 {
            g.set(g.cell_at(i), VoxelState::Unknown);
        }
    }
    g
}

#[test]
fn raycast_equals_exact_interior_crossing_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut rays = 0;
    let mut total_cells = 0;
    while rays < 1500 {
        let (w, h) = (rng.random_range(5..60), rng.random_range(5..60));
        let grid = random_grid(&mut rng, w, h);
        for _ in 0..50 {
            let o = grid.origin();
            let origin = [
                o[0] + rng.random_range(0.0..grid.width() as f64 * RES),
                o[1] + rng.random_range(0.0..grid.height() as f64 * RES),
            ];
            let angle = if rng.random_bool(0.2) {
                rng.random_range(0..8) as f64 * PI / 4.0 - PI
            } else {
                rng.random_range(-PI..PI)
            };
            let range = rng.random_range(0.1..8.0);
            let got = raycast(&grid, origin, angle, range).unwrap();
            let (cells, hit) = support::ray_cells(&grid, origin, angle, range);
            assert_eq!(got.cells, cells, "origin {origin:?} angle {angle} range {range}");
            assert_eq!(got.hit, hit);
            total_cells += cells.len();
            rays += 1;
        }
    }
    assert!(total_cells > 5 * rays);
}

#[test]
fn first_sense_in_open_space_matches_ray_fan_oracle() {
    let mut gt = OccupancyGrid::filled(100, 100, RES, [0.0, 0.0], VoxelState::Free);
    for i in 0..100 {
        for c in [Cell::new(i, 0), Cell::new(i, 99), Cell::new(0, i), Cell::new(99, i)] {
            gt.set(c, VoxelState::Occupied);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..5 {
        let start = Pose::new(
            rng.random_range(8.0..12.0),
            rng.random_range(8.0..12.0),
            rng.random_range(-PI..PI),
        );
        let mut state = SimState::new(Arc::new(gt.clone()), start, SimConfig::default()).unwrap();
        let sensor = state.config.sensor;
        let got: HashSet<Cell> = state.sense().unwrap().into_iter().collect();
        let mut expected = HashSet::new();
        for i in 0..sensor.rays_per_scan {
            let a = start.yaw - sensor.fov / 2.0 + sensor.fov * i as f64 / (sensor.rays_per_scan - 1) as f64;
            expected.extend(support::ray_cells(&gt, [start.x, start.y], a, sensor.range).0);
        }
        assert_eq!(got, expected);
        assert!(state.sense().unwrap().is_empty());
    }
}

#[test]
fn belief_never_contradicts_ground_truth() {
    let world = generate_world(&WorldGenParams::maze(3)).unwrap();
    let mut state = SimState::new(Arc::new(world.grid), world.start, SimConfig::default()).unwrap();
    state.scan_in_place().unwrap();
    let planner = PlannerConfig::default();
    let mut ps = PlannerState::new(&planner);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (mut known, mut time, mut dist) = (state.known_cells(), 0.0, 0.0);
    let mut durations = 0.0;
    let t0 = state.elapsed_time;
    for _ in 0..40 {
        let out = match plan_step(&state, &mut ps, &planner, &PlannerModels::default(), &mut rng) {
            Ok(o) => o,
            Err(PlanError::ExplorationComplete) => break,
            Err(e) => panic!("{e}"),
        };
        for c in &out.chosen.path {
            assert_eq!(
                state.belief.get(*c),
                Some(VoxelState::Free),
                "path through non-free cell"
            );
        }
        let step = state.step(&out.chosen.pose, &out.chosen.path).unwrap();
        ps.record_step(step.newly_observed);
        durations += step.duration;
        for (b, g) in state.belief.cells().iter().zip(state.ground_truth.cells()) {
            assert!(*b == VoxelState::Unknown || b == g);
        }
        assert!(state.known_cells() >= known && state.elapsed_time >= time && state.distance_traveled >= dist);
        (known, time, dist) = (state.known_cells(), state.elapsed_time, state.distance_traveled);
    }
    assert!((state.elapsed_time - t0 - durations).abs() < 1e-9);
}

fn maze_local(seed: u64) -> (LocalMap, SimState) {
    let world = generate_world(&WorldGenParams::maze(seed)).unwrap();
    let mut state = SimState::new(Arc::new(world.grid), world.start, SimConfig::default()).unwrap();
    state.scan_in_place().unwrap();
    (extract_local_map(&state), state)
}

#[test]
fn astar_lengths_bounded_by_euclid_and_dijkstra() {
    let robot = RobotModel::default();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut found = 0;
    for trial in 0..40 {
        let map = if trial % 2 == 0 {
            random_local(&mut rng)
        } else {
            maze_local(trial).0
        };
        let kernel = InflationKernel::new(robot.footprint_radius, RES);
        let trav = TraversabilityMap::new(&map, &kernel);
        let cells: Vec<Cell> = (0..N * N)
            .map(|i| Cell::new((i % N) as i32, (i / N) as i32))
            .filter(|&c| trav.is_traversable(c))
            .collect();
        if cells.len() < 2 {
            continue;
        }
        let a = cells[rng.random_range(0..cells.len())];
        let dist = support::dijkstra(&trav, RES, a);
        for _ in 0..10 {
            let b = cells[rng.random_range(0..cells.len())];
            let (pa, pb) = (map.cell_center(a), map.cell_center(b));
            let path = reachable_path(
                &map,
                &Pose::new(pa[0], pa[1], 0.0),
                &Pose::new(pb[0], pb[1], 0.0),
                &robot,
            );
            let oracle = dist[(b.y as usize) * N + b.x as usize];
            match path {
                None => assert!(oracle.is_infinite()),
                Some(p) => {
                    found += 1;
                    assert_eq!((p[0], *p.last().unwrap()), (a, b));
                    assert!(p.iter().all(|&c| trav.is_traversable(c)));
                    let len = path_length(&p, RES);
                    let euclid = (pa[0] - pb[0]).hypot(pa[1] - pb[1]);
                    assert!(len >= euclid - RES * std::f64::consts::SQRT_2 - 1e-9);
                    assert!((len - oracle).abs() < 1e-9, "A* {len} vs Dijkstra {oracle}");
                }
            }
        }
    }
    assert!(found > 100);
}

/// Two mirror-image rooms joined by a corridor through the robot cell.
fn two_rooms() -> LocalMap {
    local(
        (0..N * N)
            .map(|i| {
                let (x, y) = (i % N, i / N);
                let room = (5..=20).contains(&x) || (30..=45).contains(&x);
                let corridor = (20..=30).contains(&x) && (23..=27).contains(&y);
                if (room && (10..=40).contains(&y)) || corridor {
                    VoxelState::Free
                } else {
                    VoxelState::Occupied
                }
            })
            .collect(),
    )
}

#[test]
fn uniform_samples_split_evenly_between_equal_rooms() {
    let map = two_rooms();
    let (_, field) = local_distance_field(&map, &RobotModel::default());
    let sensor = SensorModel::default();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let (mut left, mut right) = (0u32, 0u32);
    for _ in 0..10_000 {
        let p = sample_uniform(&map, &field, &sensor, 16, &mut rng).unwrap();
        let c = map.world_to_cell(p.x, p.y);
        assert!(field.is_reachable(c));
        match c.x.cmp(&25) {
            std::cmp::Ordering::Less => left += 1,
            std::cmp::Ordering::Greater => right += 1,
            _ => {}
        }
    }
    let frac = f64::from(left) / f64::from(left + right);
    assert!((frac - 0.5).abs() <= 0.02, "left fraction {frac}");

    let a: Vec<Pose> = {
        let mut r = ChaCha8Rng::seed_from_u64(4);
        (0..20)
            .map(|_| sample_uniform(&map, &field, &sensor, 16, &mut r).unwrap())
            .collect()
    };
    let b: Vec<Pose> = {
        let mut r = ChaCha8Rng::seed_from_u64(4);
        (0..20)
            .map(|_| sample_uniform(&map, &field, &sensor, 16, &mut r).unwrap())
            .collect()
    };
    assert_eq!(a, b);
}

#[test]
fn frontier_set_equals_exhaustive_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..20 {
        let g = random_grid(&mut rng, 40, 30);
        let got: HashSet<Cell> = frontier_cells(&g).into_iter().collect();
        let mut expected = HashSet::new();
        for y in 0..30 {
            for x in 0..40 {
                let c = Cell::new(x, y);
                let unknown_next = [(1, 0), (-1, 0), (0, 1), (0, -1)]
                    .iter()
                    .any(|&(dx, dy)| g.get(c.offset(dx, dy)) == Some(VoxelState::Unknown));
                if g.get(c) == Some(VoxelState::Free) && unknown_next {
                    expected.insert(c);
                }
            }
        }
        assert_eq!(got, expected);
    }
}

#[test]
fn chosen_candidate_maximizes_recomputed_utility() {
    for seed in 0..4 {
        let (_, mut state) = maze_local(20 + seed);
        let planner = PlannerConfig::default();
        let mut ps = PlannerState::new(&planner);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..6 {
            let out = plan_step(&state, &mut ps, &planner, &PlannerModels::default(), &mut rng).unwrap();
            if !out.global {
                assert_eq!(out.candidates.len(), planner.n_samples);
                let local = extract_local_map(&state);
                let sensor = state.config.sensor;
                let utilities: Vec<f64> = out
                    .candidates
                    .iter()
                    .map(|c| {
                        let g = support::gain(&local, &c.pose, &sensor);
                        assert_eq!(c.gain, f64::from(g), "candidate gain differs from oracle");
                        assert!(c.cost > 0.0);
                        f64::from(g) / c.cost
                    })
                    .collect();
                let best = utilities.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let first_best = utilities.iter().position(|&u| u == best).unwrap();
                assert_eq!(out.chosen_index, Some(first_best));
            }
            let step = state.step(&out.chosen.pose, &out.chosen.path).unwrap();
            ps.record_step(step.newly_observed);
        }
    }
}

#[test]
fn fixed_seed_planning_is_deterministic() {
    let run = || {
        let (_, mut state) = maze_local(2);
        let planner = PlannerConfig {
            n_samples: 1,
            ..PlannerConfig::default()
        };
        let mut ps = PlannerState::new(&planner);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        (0..10)
            .map(|_| {
                let out = plan_step(&state, &mut ps, &planner, &PlannerModels::default(), &mut rng).unwrap();
                let step = state.step(&out.chosen.pose, &out.chosen.path).unwrap();
                ps.record_step(step.newly_observed);
                out.chosen.pose
            })
            .collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn generated_worlds_are_connected_and_closed() {
    for seed in 0..6 {
        for params in [WorldGenParams::maze(seed), WorldGenParams::cluttered(seed)] {
            let world = generate_world(&params).unwrap();
            let g = &world.grid;
            let start = g.world_to_cell(world.start.x, world.start.y);
            let reached = support::flood(g, start, |s| s == VoxelState::Free);
            for (i, &s) in g.cells().iter().enumerate() {
                assert_ne!(s, VoxelState::Unknown);
                if s == VoxelState::Free {
                    assert!(
                        reached[i],
                        "{:?} seed {seed}: free cell {:?} unreachable",
                        params.world_kind,
                        g.cell_at(i)
                    );
                }
                if g.is_border(g.cell_at(i)) {
                    assert_eq!(s, VoxelState::Occupied);
                }
            }
        }
    }
}

#[test]
fn maze_corridors_are_at_least_the_requested_width() {
    for seed in 0..5 {
        let params = WorldGenParams {
            corridor_width_m: 1.0,
            ..WorldGenParams::maze(seed)
        };
        let g = generate_world(&params).unwrap().grid;
        let free = |x: i32, y: i32| g.get(Cell::new(x, y)) == Some(VoxelState::Free);
        for i in 0..g.cells().len() {
            let c = g.cell_at(i);
            if !free(c.x, c.y) {
                continue;
            }
            // Some fully free 5x5 window contains the cell.
            let inside = (c.y - 4..=c.y)
                .any(|y0| (c.x - 4..=c.x).any(|x0| (y0..y0 + 5).all(|y| (x0..x0 + 5).all(|x| free(x, y)))));
            assert!(
                inside,
                "seed {seed}: free cell {c:?} lies in a corridor narrower than 5 cells"
            );
        }
    }
}

proptest! {
    #[test]
    fn select_nbv_is_scale_invariant(
        gains in proptest::collection::vec(0u32..500, 1..30),
        costs in proptest::collection::vec(0.2f64..50.0, 30),
        k in 0.01f64..100.0,
    ) {
        let cands = |gs: f64, cs: f64| -> Vec<Candidate> {
            gains.iter().zip(&costs).map(|(&g, &c)| Candidate {
                pose: Pose::new(0.0, 0.0, 0.0),
                gain: f64::from(g) * gs,
                cost: c * cs,
                path: Vec::new(),
                source: CandidateSource::Uniform,
            }).collect()
        };
        let base = select_nbv(&cands(1.0, 1.0)).unwrap();
        prop_assert_eq!(select_nbv(&cands(k, 1.0)).unwrap(), base);
        prop_assert_eq!(select_nbv(&cands(1.0, k)).unwrap(), base);
        let utils: Vec<f64> = gains.iter().zip(&costs).map(|(&g, &c)| f64::from(g) / c).collect();
        let best = utils.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(utils[base] >= best * (1.0 - 1e-12));
    }
}

#[test]
fn pure_rotation_keeps_the_local_window() {
    let (a, mut state) = maze_local(4);
    state.robot = state.robot.with_yaw(state.robot.yaw + FRAC_PI_2);
    let b = extract_local_map(&state);
    assert_eq!(a.cells(), b.cells());
    assert_ne!(a.robot_yaw, b.robot_yaw);
}
