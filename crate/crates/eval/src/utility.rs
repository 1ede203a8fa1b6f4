//! True utility of chosen actions on fixed local maps: each planner picks
//! its best-of-N candidate, which is then re-scored with the ray-cast gain.

use nbv_core::dataset::derive_seed;
use nbv_core::planning::{
    compute_gain, local_candidates, local_distance_field, select_nbv, PlannerConfig, PlannerModels, PlannerRng,
};
use nbv_core::{LocalMap, RobotModel, SensorModel};
use rand::SeedableRng;
use serde::Serialize;

use crate::stats::mean_std;
use crate::EvalError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UtilityStudy {
    pub maps: usize,
    /// Maps with no reachable cell to sample; not scored.
    pub skipped: usize,
    pub mean_utility: f64,
    pub std_utility: f64,
    pub mean_true_gain: f64,
    pub utilities: Vec<f64>,
}

/// Scores the planner's chosen action on every map. Map `i` uses the
/// random stream `derive_seed(seed, i, 0)`, shared across planners.
pub fn chosen_utility(
    maps: &[LocalMap],
    planner: &PlannerConfig,
    models: &PlannerModels,
    robot: &RobotModel,
    sensor: &SensorModel,
    seed: u64,
) -> Result<UtilityStudy, EvalError> {
    planner.validate(models)?;
    let mut utilities = Vec::with_capacity(maps.len());
    let mut gains = Vec::with_capacity(maps.len());
    let mut skipped = 0;
    for (i, local) in maps.iter().enumerate() {
        let (trav, field) = local_distance_field(local, robot);
        if field.reached().is_empty() {
            skipped += 1;
            continue;
        }
        let mut rng = PlannerRng::seed_from_u64(derive_seed(seed, i as u64, 0));
        let batch = local_candidates(
            local,
            &trav,
            &field,
            local.robot_yaw,
            robot,
            sensor,
            planner,
            models,
            &mut rng,
        )?;
        let best = &batch.candidates[select_nbv(&batch.candidates)?];
        let g = f64::from(compute_gain(local, &best.pose, sensor)?);
        gains.push(g);
        utilities.push(g / best.cost);
    }
    let (mean_utility, std_utility) = mean_std(&utilities).unwrap_or((0.0, 0.0));
    let mean_true_gain = mean_std(&gains).map_or(0.0, |p| p.0);
    Ok(UtilityStudy {
        maps: maps.len(),
        skipped,
        mean_utility,
        std_utility,
        mean_true_gain,
        utilities,
    })
}
