//! Seeded randomness. One ChaCha stream per `(seed, stage name)`, so a
//! stage draws the same numbers no matter which stages ran before it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::matalg::{expm, polar_unitary, CMatrix, UnitaryMatrix, C64};

pub type StageRng = ChaCha12Rng;

/// FNV-1a over the stage name, folded with the seed through splitmix64.
fn stage_key(seed: u64, stage: &str) -> [u8; 32] {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in stage.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut state = seed ^ h.rotate_left(17);
    let mut key = [0u8; 32];
    for chunk in key.chunks_mut(8) {
        state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
        chunk.copy_from_slice(&z.to_le_bytes());
    }
    key
}

pub fn stage_rng(seed: u64, stage: &str) -> StageRng {
    ChaCha12Rng::from_seed(stage_key(seed, stage))
}

pub fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

pub fn gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> CMatrix {
    CMatrix::from_fn(rows, cols, |_, _| C64::new(gaussian(rng), gaussian(rng)))
}

/// Haar-distributed unitary: polar factor of a complex Ginibre matrix.
pub fn random_unitary<R: Rng + ?Sized>(rng: &mut R, n: usize) -> UnitaryMatrix {
    loop {
        let g = gaussian_matrix(rng, n, n);
        if let Ok(u) = polar_unitary(&g, 1e-8) {
            return u;
        }
    }
}

/// Skew-Hermitian matrix with unit Frobenius norm.
pub fn random_skew<R: Rng + ?Sized>(rng: &mut R, n: usize) -> CMatrix {
    let g = gaussian_matrix(rng, n, n);
    let s = g.skew_part();
    let nrm = s.frob_norm();
    s.scale_re(1.0 / nrm)
}

/// `exp(delta * S)` for a fresh unit skew-Hermitian `S`.
pub fn random_near_identity<R: Rng + ?Sized>(rng: &mut R, n: usize, delta: f64) -> UnitaryMatrix {
    let s = random_skew(rng, n);
    UnitaryMatrix::trusted(expm(&s.scale_re(delta)))
}

pub fn random_unit_vector<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<C64> {
    let v: Vec<C64> = (0..n).map(|_| C64::new(gaussian(rng), gaussian(rng))).collect();
    let nrm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    v.into_iter().map(|z| z / nrm).collect()
}
