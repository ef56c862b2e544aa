//! URA geometry, DFT-derived constants and the pilot observation pipeline.

use rand::Rng;

use crate::linalg::{kron, stack_real, unitary_dft, CMat, CVec, C64};
use crate::rng::complex_normal_vec;
use crate::{Error, Result};

/// Uniform rectangular array with `n_v` rows and `n_h` columns. Antenna
/// `(v, h)` sits at flat index `v * n_h + h` (Kronecker ordering).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UraGeometry {
    n_v: usize,
    n_h: usize,
}

impl UraGeometry {
    pub fn new(n_v: usize, n_h: usize) -> Result<Self> {
        if n_v == 0 || n_h == 0 {
            return Err(Error::invalid(format!("invalid URA geometry {n_v}x{n_h}")));
        }
        Ok(Self { n_v, n_h })
    }

    /// The full-scale 4 x 16 array.
    pub fn full_scale() -> Self {
        Self { n_v: 4, n_h: 16 }
    }

    pub fn n_v(&self) -> usize {
        self.n_v
    }
    pub fn n_h(&self) -> usize {
        self.n_h
    }
    pub fn n(&self) -> usize {
        self.n_v * self.n_h
    }
}

/// Full `n x n` unitary 2D-DFT matrix `F_{n_v} (x) F_{n_h}`.
pub fn dft_2d(geom: UraGeometry) -> CMat {
    kron(&unitary_dft(geom.n_v), &unitary_dft(geom.n_h))
}

/// Pilot matrix: `n_p` rows of the 2D-DFT matrix, each scaled to squared
/// norm `rho`.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotMatrix {
    entries: CMat,
    rows: Vec<usize>,
    rho: f64,
}

impl PilotMatrix {
    /// Rows `floor(k n / n_p)` of the 2D-DFT matrix. `_selection_seed` is
    /// accepted for a future randomized selection and is currently unused.
    pub fn build(geom: UraGeometry, n_p: usize, rho: f64, _selection_seed: u64) -> Result<Self> {
        let n = geom.n();
        if n_p > n {
            return Err(Error::invalid(format!(
                "more pilots than antennas unsupported ({n_p} > {n})"
            )));
        }
        if n_p == 0 {
            return Err(Error::invalid("at least one pilot is required"));
        }
        if !(rho > 0.0) {
            return Err(Error::invalid(format!(
                "pilot power must be positive, got {rho}"
            )));
        }
        let f = dft_2d(geom);
        let rows: Vec<usize> = (0..n_p).map(|k| k * n / n_p).collect();
        let scale = C64::new(rho.sqrt(), 0.0);
        let entries = CMat::from_fn(n_p, n, |r, c| f[(rows[r], c)] * scale);
        Ok(Self { entries, rows, rho })
    }

    pub fn entries(&self) -> &CMat {
        &self.entries
    }
    pub fn row_indices(&self) -> &[usize] {
        &self.rows
    }
    pub fn rho(&self) -> f64 {
        self.rho
    }
    pub fn n_pilots(&self) -> usize {
        self.entries.nrows()
    }
    pub fn n_antennas(&self) -> usize {
        self.entries.ncols()
    }
}

/// The `4n x n` structure transform `Q_{n_v} (x) Q_{n_h}`, where `Q_T` holds
/// the first `T` columns of the unitary `2T x 2T` DFT matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct QTransform {
    entries: CMat,
    adjoint: CMat,
    geom: UraGeometry,
}

fn half_dft(t: usize) -> CMat {
    unitary_dft(2 * t).columns(0, t).into_owned()
}

impl QTransform {
    pub fn build(geom: UraGeometry) -> Self {
        let entries = kron(&half_dft(geom.n_v), &half_dft(geom.n_h));
        let adjoint = entries.adjoint();
        Self {
            entries,
            adjoint,
            geom,
        }
    }

    pub fn entries(&self) -> &CMat {
        &self.entries
    }
    /// `Q^H`, cached.
    pub fn adjoint(&self) -> &CMat {
        &self.adjoint
    }
    pub fn geometry(&self) -> UraGeometry {
        self.geom
    }
    pub fn n(&self) -> usize {
        self.entries.ncols()
    }
}

/// Received pilot signal `y = P h + n` of one MT.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub y: CVec,
    pub noise_var: f64,
}

pub fn observe<R: Rng + ?Sized>(
    h: &CVec,
    pilots: &PilotMatrix,
    noise_var: f64,
    rng: &mut R,
) -> Result<Observation> {
    if !(noise_var > 0.0) {
        return Err(Error::invalid(format!(
            "noise variance must be positive, got {noise_var}"
        )));
    }
    let noise = complex_normal_vec(rng, pilots.n_pilots(), 1.0);
    observe_with_noise(h, pilots, noise_var, &noise)
}

/// `y = P h + sqrt(noise_var) w` for a given unit-variance noise draw `w`.
/// Lets paired comparisons reuse one noise realisation across schemes.
pub fn observe_with_noise(
    h: &CVec,
    pilots: &PilotMatrix,
    noise_var: f64,
    unit_noise: &CVec,
) -> Result<Observation> {
    if h.len() != pilots.n_antennas() {
        return Err(Error::dim("channel", pilots.n_antennas(), h.len()));
    }
    if unit_noise.len() != pilots.n_pilots() {
        return Err(Error::dim("noise", pilots.n_pilots(), unit_noise.len()));
    }
    let y = pilots.entries() * h + unit_noise * C64::new(noise_var.sqrt(), 0.0);
    Ok(Observation { y, noise_var })
}

/// `Q P^H y`.
pub fn preprocess(obs: &Observation, pilots: &PilotMatrix, q: &QTransform) -> Result<CVec> {
    if obs.y.len() != pilots.n_pilots() {
        return Err(Error::dim("observation", pilots.n_pilots(), obs.y.len()));
    }
    if q.n() != pilots.n_antennas() {
        return Err(Error::dim("Q transform", pilots.n_antennas(), q.n()));
    }
    Ok(q.entries() * (pilots.entries().adjoint() * &obs.y))
}

/// Real `[Re; Im]` encoder input of length `8n`.
pub fn encoder_input(obs: &Observation, pilots: &PilotMatrix, q: &QTransform) -> Result<Vec<f64>> {
    Ok(stack_real(&preprocess(obs, pilots, q)?))
}

/// `sigma^2 = rho / 10^(snr_db / 10)`.
pub fn snr_to_noise_var(snr_db: f64, rho: f64) -> f64 {
    rho * 10f64.powf(-snr_db / 10.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c64, max_abs_diff};
    use crate::rng::seeded;

    fn geom(v: usize, h: usize) -> UraGeometry {
        UraGeometry::new(v, h).unwrap()
    }

    /// Scratch 2D-DFT entry for antenna (a1, b1), frequency (a2, b2).
    fn scratch_dft(nv: usize, nh: usize, row: usize, col: usize) -> C64 {
        let (rv, rh) = (row / nh, row % nh);
        let (cv, ch) = (col / nh, col % nh);
        let ph = -2.0
            * std::f64::consts::PI
            * ((rv * cv) as f64 / nv as f64 + (rh * ch) as f64 / nh as f64);
        C64::from_polar(1.0 / ((nv * nh) as f64).sqrt(), ph)
    }

    #[test]
    fn pilot_rows_unit_norm_and_orthogonal() {
        let p = PilotMatrix::build(geom(4, 16), 8, 1.0, 0).unwrap();
        assert_eq!(p.entries().shape(), (8, 64));
        let g = p.entries() * p.entries().adjoint();
        assert!(max_abs_diff(&g, &CMat::identity(8, 8)) < 1e-12);
    }

    #[test]
    fn full_pilot_matrix_is_unitary() {
        let p = PilotMatrix::build(geom(2, 4), 8, 1.0, 0).unwrap();
        let g = p.entries() * p.entries().adjoint();
        assert!(max_abs_diff(&g, &CMat::identity(8, 8)) < 1e-12);
    }

    #[test]
    fn pilot_rows_match_scratch_dft() {
        let p = PilotMatrix::build(geom(2, 4), 4, 1.0, 0).unwrap();
        assert_eq!(p.row_indices(), &[0, 2, 4, 6]);
        for (r, &row) in p.row_indices().iter().enumerate() {
            for c in 0..8 {
                assert!((p.entries()[(r, c)] - scratch_dft(2, 4, row, c)).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn pilot_power_scales_rows() {
        let p = PilotMatrix::build(geom(2, 4), 3, 2.5, 0).unwrap();
        for r in 0..3 {
            let s: f64 = p.entries().row(r).iter().map(|z| z.norm_sqr()).sum();
            assert!((s - 2.5).abs() < 1e-12);
        }
    }

    #[test]
    fn too_many_pilots_rejected() {
        let err = PilotMatrix::build(geom(2, 2), 5, 1.0, 0).unwrap_err();
        assert!(err
            .to_string()
            .contains("more pilots than antennas unsupported"));
    }

    #[test]
    fn q_is_isometry_for_full_scale_geometry() {
        let q = QTransform::build(UraGeometry::full_scale());
        assert_eq!(q.entries().shape(), (256, 64));
        let g = q.adjoint() * q.entries();
        assert!(max_abs_diff(&g, &CMat::identity(64, 64)) < 1e-12);
    }

    #[test]
    fn q_smallest_case() {
        let q = QTransform::build(geom(1, 1));
        assert_eq!(q.entries().shape(), (4, 1));
        let s: f64 = q.entries().iter().map(|z| z.norm_sqr()).sum();
        assert!((s - 1.0).abs() < 1e-15);
        for z in q.entries().iter() {
            assert!((z - c64(0.5, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn q_matches_scratch_kronecker() {
        let q = QTransform::build(geom(2, 2));
        // Q_2: first 2 columns of the unitary 4-point DFT
        let q2 = |a: usize, b: usize| {
            C64::from_polar(0.5, -2.0 * std::f64::consts::PI * (a * b) as f64 / 4.0)
        };
        for r in 0..16 {
            for c in 0..4 {
                let want = q2(r / 4, c / 2) * q2(r % 4, c % 2);
                assert!((q.entries()[(r, c)] - want).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn noiseless_observation_is_ph() {
        let g = geom(2, 4);
        let p = PilotMatrix::build(g, 4, 1.0, 0).unwrap();
        let h = complex_normal_vec(&mut seeded(1), 8, 1.0);
        let zero = CVec::zeros(4);
        let obs = observe_with_noise(&h, &p, 1e-3, &zero).unwrap();
        assert!((obs.y.clone() - p.entries() * &h).norm() < 1e-15);
    }

    #[test]
    fn observation_noise_variance() {
        let g = geom(1, 2);
        let p = PilotMatrix::build(g, 2, 1.0, 0).unwrap();
        let h = CVec::zeros(2);
        let mut rng = seeded(4);
        let draws = 100_000;
        let (mut s0, mut re, mut im) = (0.0, 0.0, 0.0);
        for _ in 0..draws {
            let y = observe(&h, &p, 0.3, &mut rng).unwrap().y;
            s0 += y[0].norm_sqr();
            re += y[1].re * y[1].re;
            im += y[1].im * y[1].im;
        }
        let n = draws as f64;
        assert!((s0 / n / 0.3 - 1.0).abs() < 0.05);
        assert!((re / n / 0.15 - 1.0).abs() < 0.05);
        assert!((im / n / 0.15 - 1.0).abs() < 0.05);
    }

    #[test]
    fn observation_is_seed_deterministic() {
        let p = PilotMatrix::build(geom(2, 2), 2, 1.0, 0).unwrap();
        let h = complex_normal_vec(&mut seeded(2), 4, 1.0);
        let a = observe(&h, &p, 0.1, &mut seeded(9)).unwrap();
        let b = observe(&h, &p, 0.1, &mut seeded(9)).unwrap();
        assert_eq!(a, b);
        assert!(observe(&h, &p, 0.0, &mut seeded(9)).is_err());
    }

    #[test]
    fn preprocess_cases() {
        let g = geom(2, 4);
        let q = QTransform::build(g);
        let p = PilotMatrix::build(g, 3, 1.0, 0).unwrap();
        let zero = Observation {
            y: CVec::zeros(3),
            noise_var: 1.0,
        };
        assert!(preprocess(&zero, &p, &q)
            .unwrap()
            .iter()
            .all(|z| z.norm() == 0.0));

        // full pilots, noiseless: Q P^H P h = Q h
        let pf = PilotMatrix::build(g, 8, 1.0, 0).unwrap();
        let h = complex_normal_vec(&mut seeded(5), 8, 1.0);
        let obs = observe_with_noise(&h, &pf, 1.0, &CVec::zeros(8)).unwrap();
        let out = preprocess(&obs, &pf, &q).unwrap();
        assert!((out - q.entries() * &h).norm() < 1e-12);
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn preprocess_matches_two_step_evaluation() {
        let g = geom(2, 4);
        let q = QTransform::build(g);
        let p = PilotMatrix::build(g, 4, 1.0, 0).unwrap();
        let mut rng = seeded(11);
        let y = complex_normal_vec(&mut rng, 4, 1.0);
        let obs = Observation {
            y: y.clone(),
            noise_var: 0.5,
        };
        let out = preprocess(&obs, &p, &q).unwrap();
        // two-step scratch: first P^H y, then Q times it, entry by entry
        let mut ph_y = [C64::new(0.0, 0.0); 8];
        for a in 0..8 {
            for r in 0..4 {
                ph_y[a] += p.entries()[(r, a)].conj() * y[r];
            }
        }
        for k in 0..32 {
            let mut s = C64::new(0.0, 0.0);
            for a in 0..8 {
                s += q.entries()[(k, a)] * ph_y[a];
            }
            assert!((s - out[k]).norm() < 1e-12);
        }
        assert_eq!(encoder_input(&obs, &p, &q).unwrap().len(), 64);
    }

    #[test]
    fn snr_conversion() {
        assert_eq!(snr_to_noise_var(0.0, 1.0), 1.0);
        assert!((snr_to_noise_var(15.0, 1.0) - 0.031_622_776_601_683_79).abs() < 1e-15);
        assert!((snr_to_noise_var(20.0, 1.0) - 0.01).abs() < 1e-17);
    }
}
