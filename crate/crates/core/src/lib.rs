//! Weighted nearest-neighbor classifiers for labels collected from several
//! imperfect workers.
//!
//! The library is generic over the floating-point type (`f32` or `f64`); the
//! aliases at the crate root fix it to `f64`.

pub mod classify;
pub mod config;
pub mod datagen;
pub mod enn;
pub mod error;
pub mod experiments;
pub mod io;
pub mod neighbors;
pub mod points;
pub mod scalar;
pub mod weights;

pub use classify::{
    bayes_classify, empirical_regret, expected_risk, smoothed_risk, threshold, zero_one_risk,
    LabeledDataset, WnnModel,
};
pub use datagen::{QualitySetup, SimulationId, SimulationSpec, QUALITY_SETUPS};
pub use enn::{
    enhance_label, estimate_quality_expert, estimate_quality_iterative, filter_adversarial,
    CrowdData, CrowdIndex, EnnModel, IterativeOptions, QualitySource, Worker, WorkerQuality,
};
pub use error::{Error, Result};
pub use experiments::{
    cross_validate_global, run_gamma_sweep, run_quality_estimation_eval, run_risk_comparison,
    run_weight_matching_check, ExperimentConfig, KRule, Method, MstarRule, RiskTable,
};
pub use neighbors::{brute_force_nearest, Neighbor, NeighborIndex, NeighborList};
pub use points::Points;
pub use scalar::Scalar;
pub use weights::{
    check_admissibility, knn_weights, optimal_k_star, optimal_m_star, ownn_weights,
    RegretConstants, WeightVector,
};

pub type Dataset = LabeledDataset<f64>;
pub type Crowd = CrowdData<f64>;
pub type Quality = WorkerQuality<f64>;
pub type Weights = WeightVector<f64>;
pub type Enn = EnnModel<f64>;
pub type Wnn = WnnModel<f64>;
pub type Index = NeighborIndex<f64>;
pub type Dataset32 = LabeledDataset<f32>;
pub type Crowd32 = CrowdData<f32>;
pub type Enn32 = EnnModel<f32>;
