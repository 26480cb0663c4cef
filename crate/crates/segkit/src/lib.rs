//! segkit: sectoral gender-segregation indices, shift-share and wage-gap
//! decompositions, propensity-score matching, and the estimators backing
//! them, with a synthetic microdata generator for end-to-end validation.

pub mod counterfactual;
pub mod estimators;
pub mod frame;
pub mod kbo;
pub mod linalg;
pub mod matching;
pub mod pipeline;
pub mod rng;
pub mod segregation;
pub mod shiftshare;
pub mod synthgen;
