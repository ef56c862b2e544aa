//! Oversampled 2D-DFT codebook with direction index plus magnitude feedback.

use crate::array::UraGeometry;
use crate::linalg::{c64, kron, CMat, CVec};
use crate::{Error, Result};

/// Bits spent on the channel magnitude (one `f32`).
pub const MAGNITUDE_BITS: u32 = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct DftCodebook {
    codewords: CMat,
    bits_dir: u32,
    oversampling: (usize, usize),
}

impl DftCodebook {
    /// `n x K_dir`, one unit-norm codeword per column.
    pub fn codewords(&self) -> &CMat {
        &self.codewords
    }

    pub fn bits_dir(&self) -> u32 {
        self.bits_dir
    }

    /// `(O_v, O_h)`.
    pub fn oversampling(&self) -> (usize, usize) {
        self.oversampling
    }

    pub fn len(&self) -> usize {
        self.codewords.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n(&self) -> usize {
        self.codewords.nrows()
    }
}

/// Most balanced factor pair `O_v * O_h = 2^bits_dir / n` with `O_h >= O_v`.
pub fn oversampling_split(geom: UraGeometry, bits_dir: u32) -> Result<(usize, usize)> {
    if bits_dir == 0 || bits_dir > 24 {
        return Err(Error::invalid(format!(
            "direction bits must be in 1..=24, got {bits_dir}"
        )));
    }
    let k = 1usize << bits_dir;
    let n = geom.n();
    if !k.is_multiple_of(n) {
        return Err(Error::invalid(format!(
            "2^{bits_dir} = {k} codewords is not an integer multiple of {n} antennas"
        )));
    }
    // both factors are powers of two since k / n divides a power of two
    let prod = k / n;
    let e = prod.trailing_zeros();
    Ok((1 << (e / 2), 1 << (e - e / 2)))
}

/// `T x (T*O)` oversampled DFT with columns `exp(-i 2 pi t k / (T O)) / sqrt(T)`.
fn oversampled_dft(t: usize, o: usize) -> CMat {
    let cols = t * o;
    let scale = 1.0 / (t as f64).sqrt();
    CMat::from_fn(t, cols, |r, k| {
        let phase = -2.0 * std::f64::consts::PI * (r * k) as f64 / cols as f64;
        c64(phase.cos() * scale, phase.sin() * scale)
    })
}

pub fn build_dft_codebook(geom: UraGeometry, bits_dir: u32) -> Result<DftCodebook> {
    let (o_v, o_h) = oversampling_split(geom, bits_dir)?;
    Ok(DftCodebook {
        codewords: kron(
            &oversampled_dft(geom.n_v(), o_v),
            &oversampled_dft(geom.n_h(), o_h),
        ),
        bits_dir,
        oversampling: (o_v, o_h),
    })
}

/// `argmax_k |c_k^H h|`, ties to the lowest index.
pub fn select_codeword(h: &CVec, cb: &DftCodebook) -> Result<usize> {
    if h.len() != cb.n() {
        return Err(Error::dim("channel estimate", cb.n(), h.len()));
    }
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (k, col) in cb.codewords.column_iter().enumerate() {
        let v = col.dotc(h).norm_sqr();
        if v > best_val {
            best = k;
            best_val = v;
        }
    }
    Ok(best)
}

/// Direction index plus magnitude, as sent by one MT.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirMagFeedback {
    pub index: u32,
    pub magnitude: f32,
    pub bits_dir: u32,
}

impl DirMagFeedback {
    pub fn bit_len(&self) -> usize {
        (self.bits_dir + MAGNITUDE_BITS) as usize
    }

    /// `bits_dir`-bit index then the big-endian `f32`, packed MSB first.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.bit_len().div_ceil(8)];
        let mut pos = 0usize;
        let mut push = |value: u32, width: u32| {
            for b in (0..width).rev() {
                if (value >> b) & 1 == 1 {
                    out[pos / 8] |= 0x80 >> (pos % 8);
                }
                pos += 1;
            }
        };
        push(self.index, self.bits_dir);
        push(self.magnitude.to_bits(), MAGNITUDE_BITS);
        out
    }

    pub fn from_bytes(bytes: &[u8], bits_dir: u32) -> Result<Self> {
        let need = ((bits_dir + MAGNITUDE_BITS) as usize).div_ceil(8);
        if bytes.len() != need {
            return Err(Error::dim(
                "direction/magnitude feedback bytes",
                need,
                bytes.len(),
            ));
        }
        let mut pos = 0usize;
        let mut pull = |width: u32| {
            let mut v = 0u32;
            for _ in 0..width {
                v = (v << 1) | ((bytes[pos / 8] >> (7 - pos % 8)) & 1) as u32;
                pos += 1;
            }
            v
        };
        let index = pull(bits_dir);
        let magnitude = f32::from_bits(pull(MAGNITUDE_BITS));
        Ok(Self {
            index,
            magnitude,
            bits_dir,
        })
    }
}

/// MT side: quantize the direction of `h_hat` and send its norm verbatim.
pub fn dft_feedback(h_hat: &CVec, cb: &DftCodebook) -> Result<DirMagFeedback> {
    Ok(DirMagFeedback {
        index: select_codeword(h_hat, cb)? as u32,
        magnitude: h_hat.norm() as f32,
        bits_dir: cb.bits_dir,
    })
}

/// BS side: `m * c_k`.
pub fn reconstruct_dft(fb: &DirMagFeedback, cb: &DftCodebook) -> Result<CVec> {
    let k = fb.index as usize;
    if k >= cb.len() {
        return Err(Error::invalid(format!(
            "codeword index {k} out of range for {} codewords",
            cb.len()
        )));
    }
    if !(fb.magnitude >= 0.0) {
        return Err(Error::invalid("feedback magnitude must be nonnegative"));
    }
    Ok(cb.codewords.column(k) * c64(fb.magnitude as f64, 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{complex_normal_vec, seeded};

    fn geom(v: usize, h: usize) -> UraGeometry {
        UraGeometry::new(v, h).unwrap()
    }

    #[test]
    fn full_scale_split_and_unit_norm() {
        let cb = build_dft_codebook(UraGeometry::full_scale(), 8).unwrap();
        assert_eq!(cb.len(), 256);
        assert_eq!(cb.oversampling(), (2, 2));
        for col in cb.codewords().column_iter() {
            assert!((col.norm() - 1.0).abs() < 1e-12);
        }
        assert_eq!(oversampling_split(geom(2, 8), 8).unwrap(), (4, 4));
        assert_eq!(oversampling_split(geom(2, 8), 7).unwrap(), (2, 4));
    }

    #[test]
    fn infeasible_split_is_rejected() {
        assert!(build_dft_codebook(geom(2, 8), 3).is_err());
        assert!(build_dft_codebook(geom(3, 4), 8).is_err());
    }

    #[test]
    fn critical_sampling_is_orthonormal() {
        let cb = build_dft_codebook(geom(2, 4), 3).unwrap();
        assert_eq!(cb.oversampling(), (1, 1));
        let gram = cb.codewords().adjoint() * cb.codewords();
        assert!((gram - CMat::identity(8, 8)).camax() < 1e-12);
    }

    #[test]
    fn matches_direct_construction() {
        let cb = build_dft_codebook(geom(2, 2), 4).unwrap();
        assert_eq!(cb.oversampling(), (2, 2));
        // column index k = k_v * 4 + k_h, row index r = t_v * 2 + t_h
        for kv in 0..4 {
            for kh in 0..4 {
                for tv in 0..2 {
                    for th in 0..2 {
                        let ph = -2.0
                            * std::f64::consts::PI
                            * ((tv * kv) as f64 / 4.0 + (th * kh) as f64 / 4.0);
                        let want = c64(ph.cos() / 2.0, ph.sin() / 2.0);
                        let got = cb.codewords()[(tv * 2 + th, kv * 4 + kh)];
                        assert!((got - want).norm() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn self_selection_and_zero_tie() {
        let cb = build_dft_codebook(geom(2, 4), 5).unwrap();
        for k in [0, 7, 31] {
            let h: CVec = cb.codewords().column(k) * c64(-0.3, 2.0);
            assert_eq!(select_codeword(&h, &cb).unwrap(), k);
        }
        assert_eq!(select_codeword(&CVec::zeros(8), &cb).unwrap(), 0);
    }

    #[test]
    fn selection_matches_linear_scan() {
        let cb = build_dft_codebook(geom(2, 4), 5).unwrap();
        let mut rng = seeded(21);
        for _ in 0..1000 {
            let h = complex_normal_vec(&mut rng, 8, 1.0);
            let mut best = (0, -1.0);
            for k in 0..cb.len() {
                let mut acc = c64(0.0, 0.0);
                for t in 0..8 {
                    acc += cb.codewords()[(t, k)].conj() * h[t];
                }
                if acc.norm() > best.1 {
                    best = (k, acc.norm());
                }
            }
            assert_eq!(select_codeword(&h, &cb).unwrap(), best.0);
        }
    }

    #[test]
    fn reconstruction_norm_and_aligned_pipeline() {
        let cb = build_dft_codebook(geom(2, 4), 5).unwrap();
        for k in 0..cb.len() as u32 {
            let fb = DirMagFeedback {
                index: k,
                magnitude: 2.5,
                bits_dir: 5,
            };
            assert!((reconstruct_dft(&fb, &cb).unwrap().norm() - 2.5).abs() < 1e-12);
        }
        let zero = DirMagFeedback {
            index: 3,
            magnitude: 0.0,
            bits_dir: 5,
        };
        assert_eq!(reconstruct_dft(&zero, &cb).unwrap(), CVec::zeros(8));
        let bad = DirMagFeedback {
            index: 32,
            magnitude: 1.0,
            bits_dir: 5,
        };
        assert!(reconstruct_dft(&bad, &cb).is_err());

        // a real, positive multiple of a codeword survives exactly (up to f32 magnitude)
        let h: CVec = cb.codewords().column(9) * c64(1.5, 0.0);
        let fb = dft_feedback(&h, &cb).unwrap();
        assert_eq!(fb.index, 9);
        assert!((reconstruct_dft(&fb, &cb).unwrap() - h).camax() < 1e-7);
    }

    #[test]
    fn wire_format() {
        let fb = DirMagFeedback {
            index: 0xA5,
            magnitude: 1.0,
            bits_dir: 8,
        };
        let bytes = fb.to_bytes();
        assert_eq!(bytes, vec![0xA5, 0x3F, 0x80, 0x00, 0x00]);
        assert_eq!(DirMagFeedback::from_bytes(&bytes, 8).unwrap(), fb);

        let odd = DirMagFeedback {
            index: 5,
            magnitude: 3.25,
            bits_dir: 3,
        };
        let bytes = odd.to_bytes();
        assert_eq!(bytes.len(), 5);
        assert_eq!(DirMagFeedback::from_bytes(&bytes, 3).unwrap(), odd);
        assert!(DirMagFeedback::from_bytes(&bytes[..4], 3).is_err());
    }
}
