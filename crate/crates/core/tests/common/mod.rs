//! Small Federico instances shared by the pipeline tests.

use irmc::design::{DesignSpec, Domain, DomainSchedule, SiteScheme};
use irmc::intervention::{InterventionConfig, InterventionMode};
use irmc::model::{federico_model, FedericoParams, ImpulseModel};
use irmc::solver::{Lookahead, SolverConfig};
use irmc::surrogate::{LambdaMode, SurrogateSpec, TpsKernel};

/// Federico dynamics and costs over `n_steps` steps of the default length.
pub fn short_federico(n_steps: usize, r: f64) -> ImpulseModel {
    federico_model(&FedericoParams { horizon: 0.1 * n_steps as f64, r, ..Default::default() })
}

pub fn small_config(seed: u64, use_zhat: bool) -> SolverConfig {
    SolverConfig {
        lookahead: Lookahead::ToMaturity,
        mpc_mode: false,
        design: DesignSpec {
            scheme: SiteScheme::LatinHypercube,
            domain: DomainSchedule::fixed(Domain::new(vec![1.0], vec![90.0]).unwrap()),
            n_unique: 60,
            n_rep: 20,
            log_scale: false,
        },
        surrogate: SurrogateSpec::Tps { lambda_mode: LambdaMode::Gcv, kernel: TpsKernel::ThinPlate, max_knots: 40 },
        log_inputs: false,
        intervention: InterventionConfig { mode: InterventionMode::LinearRootSearch, use_zhat, ..Default::default() },
        seed,
    }
}
