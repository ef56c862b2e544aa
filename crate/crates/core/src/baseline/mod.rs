//! Conventional DFT-codebook feedback and the channel estimators it uses.

mod dft;
mod gmm;

pub use dft::{
    build_dft_codebook, dft_feedback, oversampling_split, reconstruct_dft, select_codeword,
    DftCodebook, DirMagFeedback, MAGNITUDE_BITS,
};
pub use gmm::{
    gmm_estimate, gmm_fit, gmm_fit_with, read_prior, write_prior, GmmConfig, GmmEstimator, GmmPrior,
};

use crate::array::{Observation, PilotMatrix};
use crate::linalg::{CMat, CVec};
use crate::{Error, Result};

/// Which estimate feeds the codebook search at the MT.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    Ls,
    Gmm,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::Ls => "LS",
            Estimator::Gmm => "GMM",
        }
    }
}

/// Moore-Penrose pseudoinverse of the pilot matrix.
pub fn pilot_pseudoinverse(pilots: &PilotMatrix) -> Result<CMat> {
    pilots
        .entries()
        .clone()
        .pseudo_inverse(1e-12)
        .map_err(|e| Error::Factorization(format!("pilot pseudoinverse: {e}")))
}

/// Minimum-norm least-squares estimate `P^+ y`.
pub fn ls_estimate(obs: &Observation, pilots: &PilotMatrix) -> Result<CVec> {
    if obs.y.len() != pilots.n_pilots() {
        return Err(Error::dim("observation", pilots.n_pilots(), obs.y.len()));
    }
    Ok(pilot_pseudoinverse(pilots)? * &obs.y)
}
