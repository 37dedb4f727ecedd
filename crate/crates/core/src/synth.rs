//! Seeded generators for dictionaries, sparse signals, measurements,
//! corrupted predictions and moving-target sequences.
//!
//! Every generator is a pure function of its parameters and a `u64` seed. The
//! seed selects a ChaCha8 generator; independent draws inside one generator
//! use separate ChaCha streams so that, for example, turning structure off
//! leaves the Gaussian part of a dictionary bit-identical. Trial `k` of an
//! experiment with base seed `s` uses seed `s ^ k`.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Result, SblError};
use crate::model::Dictionary;

/// Seed of trial `trial` under base seed `base`.
pub fn trial_seed(base: u64, trial: u64) -> u64 {
    base ^ trial
}

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn normal(r: &mut ChaCha8Rng) -> f64 {
    Distribution::<f64>::sample(&StandardNormal, r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DictKind {
    Iid,
    IidScaled,
    LocalCoherent,
    LocalCoherentScaled,
}

impl DictKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "iid" => Some(DictKind::Iid),
            "iid_scaled" => Some(DictKind::IidScaled),
            "local_coherent" => Some(DictKind::LocalCoherent),
            "local_coherent_scaled" => Some(DictKind::LocalCoherentScaled),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DictKind::Iid => "iid",
            DictKind::IidScaled => "iid_scaled",
            DictKind::LocalCoherent => "local_coherent",
            DictKind::LocalCoherentScaled => "local_coherent_scaled",
        }
    }

    fn blocked(&self) -> bool {
        matches!(
            self,
            DictKind::LocalCoherent | DictKind::LocalCoherentScaled
        )
    }

    fn scaled(&self) -> bool {
        matches!(self, DictKind::IidScaled | DictKind::LocalCoherentScaled)
    }
}

/// Strength of the column structure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Structure {
    /// Off-diagonal block value 0.8, column scales `U[0, 1]`.
    Preset,
    /// Off-diagonal block value `1 − 1/c`, column scales `U[1/c, 1]`; `c ≥ 1`,
    /// and `c = 1` is the i.i.d. model.
    Param(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DictModel {
    pub kind: DictKind,
    pub structure: Structure,
    pub block_size: usize,
}

impl DictModel {
    pub fn iid() -> Self {
        DictModel {
            kind: DictKind::Iid,
            structure: Structure::Param(1.0),
            block_size: 4,
        }
    }

    fn off_diagonal(&self) -> f64 {
        match self.structure {
            Structure::Preset => 0.8,
            Structure::Param(c) => 1.0 - 1.0 / c,
        }
    }

    fn scale_range(&self) -> (f64, f64) {
        match self.structure {
            Structure::Preset => (0.0, 1.0),
            Structure::Param(c) => (1.0 / c, 1.0),
        }
    }
}

/// The block-diagonal mixing matrix of a locally coherent model.
pub fn block_mixing(n: usize, block_size: usize, off_diagonal: f64) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |r, c| {
        if r == c {
            1.0
        } else if r / block_size == c / block_size {
            off_diagonal
        } else {
            0.0
        }
    })
}

/// `Φ̃` with i.i.d. `N(0, 1/M)` entries, optionally mixed within blocks and
/// scaled per column, then rescaled so that a reference signal produces the
/// same measurement energy as under `Φ̃`.
pub fn gen_dictionary(m: usize, n: usize, model: &DictModel, seed: u64) -> Result<Dictionary> {
    if m == 0 || n == 0 {
        return Err(SblError::Dimension(
            "dictionary dimensions must be positive".into(),
        ));
    }
    if let Structure::Param(c) = model.structure {
        if !(c >= 1.0 && c.is_finite()) {
            return Err(SblError::InvalidInput(format!(
                "structure parameter must be >= 1, got {c}"
            )));
        }
    }
    if model.kind.blocked() && (model.block_size == 0 || n % model.block_size != 0) {
        return Err(SblError::Dimension(format!(
            "block size {} does not divide n = {n}",
            model.block_size
        )));
    }
    let sd = 1.0 / (m as f64).sqrt();
    let mut r0 = rng(seed, 0);
    let base = DMatrix::from_fn(m, n, |_, _| sd * normal(&mut r0));
    let trivial = model.structure == Structure::Param(1.0);
    if model.kind == DictKind::Iid || trivial {
        return Dictionary::new(base);
    }
    let mut phi = if model.kind.blocked() {
        &base * block_mixing(n, model.block_size, model.off_diagonal())
    } else {
        base.clone()
    };
    if model.kind.scaled() {
        let (lo, hi) = model.scale_range();
        let mut r1 = rng(seed, 1);
        for mut col in phi.column_iter_mut() {
            col *= r1.random_range(lo..hi);
        }
    }
    let mut r2 = rng(seed, 2);
    let x_ref = DVector::from_fn(n, |_, _| normal(&mut r2));
    let ratio = (&base * &x_ref).norm() / (&phi * &x_ref).norm();
    phi *= ratio;
    Dictionary::new(phi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignalKind {
    GaussianNonzeros,
    UnitNonzeros,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SignalModel {
    pub kind: SignalKind,
    pub s: usize,
}

/// `s` uniformly placed nonzeros, `N(0, 1)` or all ones.
pub fn gen_sparse_signal(n: usize, model: &SignalModel, seed: u64) -> Result<DVector<f64>> {
    if model.s == 0 || model.s > n {
        return Err(SblError::InvalidInput(format!(
            "need 1 <= s <= n, got s = {} n = {n}",
            model.s
        )));
    }
    let mut r = rng(seed, 0);
    let mut support = sample(&mut r, n, model.s).into_vec();
    support.sort_unstable();
    let mut x = DVector::zeros(n);
    for i in support {
        x[i] = match model.kind {
            SignalKind::UnitNonzeros => 1.0,
            // an exact zero draw would break the sparsity count
            SignalKind::GaussianNonzeros => loop {
                let v = normal(&mut r);
                if v != 0.0 {
                    break v;
                }
            },
        };
    }
    Ok(x)
}

/// `y = Φx + e` with `e ~ N(0, σ² I)`.
pub fn measure(
    dict: &Dictionary,
    x: &DVector<f64>,
    sigma_obs2: f64,
    seed: u64,
) -> Result<DVector<f64>> {
    if x.len() != dict.n() {
        return Err(SblError::Dimension(
            "signal length differs from dictionary width".into(),
        ));
    }
    if !(sigma_obs2 >= 0.0 && sigma_obs2.is_finite()) {
        return Err(SblError::InvalidInput("noise variance must be >= 0".into()));
    }
    let mut y = dict.phi() * x;
    if sigma_obs2 > 0.0 {
        let sd = sigma_obs2.sqrt();
        let mut r = rng(seed, 0);
        for v in y.iter_mut() {
            *v += sd * normal(&mut r);
        }
    }
    Ok(y)
}

/// How the support of a prediction is damaged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SupportError {
    /// Exactly this many nonzeros trade places with zeros.
    Swaps(usize),
    /// Each nonzero trades places with a zero with this probability.
    SwapProb(f64),
}

/// Support damage followed by `N(0, σ_dyn²)` noise on every entry.
pub fn corrupt_prediction(
    x: &DVector<f64>,
    support_error: SupportError,
    sigma_dyn2: f64,
    seed: u64,
) -> Result<DVector<f64>> {
    if !(sigma_dyn2 >= 0.0 && sigma_dyn2.is_finite()) {
        return Err(SblError::InvalidInput(
            "dynamics noise variance must be >= 0".into(),
        ));
    }
    let nonzero: Vec<usize> = (0..x.len()).filter(|&i| x[i] != 0.0).collect();
    let zero: Vec<usize> = (0..x.len()).filter(|&i| x[i] == 0.0).collect();
    let mut r = rng(seed, 0);
    let mut out = x.clone();
    let movers: Vec<usize> = match support_error {
        SupportError::Swaps(k) => {
            if k > nonzero.len() || k > zero.len() {
                return Err(SblError::InvalidInput(format!(
                    "cannot swap {k} entries with {} nonzeros and {} zeros",
                    nonzero.len(),
                    zero.len()
                )));
            }
            let mut pick: Vec<usize> = sample(&mut r, nonzero.len(), k)
                .into_iter()
                .map(|p| nonzero[p])
                .collect();
            pick.sort_unstable();
            pick
        }
        SupportError::SwapProb(p) => {
            if !(0.0..=1.0).contains(&p) {
                return Err(SblError::InvalidInput(format!(
                    "swap probability must be in [0, 1], got {p}"
                )));
            }
            let mut pick: Vec<usize> = nonzero
                .iter()
                .copied()
                .filter(|_| r.random_bool(p))
                .collect();
            pick.truncate(zero.len());
            pick
        }
    };
    let targets: Vec<usize> = sample(&mut r, zero.len(), movers.len())
        .into_iter()
        .map(|p| zero[p])
        .collect();
    for (&from, &to) in movers.iter().zip(&targets) {
        out.swap_rows(from, to);
    }
    if sigma_dyn2 > 0.0 {
        let noise = Normal::new(0.0, sigma_dyn2.sqrt()).expect("finite variance");
        let mut rn = rng(seed, 1);
        for v in out.iter_mut() {
            *v += noise.sample(&mut rn);
        }
    }
    Ok(out)
}

/// Moving targets: ground truth plus the per-step dynamics matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackingDataset {
    /// One N-vector per step.
    pub x_true: Vec<DVector<f64>>,
    /// `F_t` for steps 2..=L: maps each target's position at `t − 1` to its
    /// intended position at `t`.
    pub dynamics: Vec<DMatrix<f64>>,
    /// Assigned direction of each target, ±1, in initial-position order.
    pub directions: Vec<i8>,
    pub innovation_prob: f64,
    pub seed: u64,
}

/// Initial values below this magnitude are pushed out to it.
pub const MIN_INITIAL_MAGNITUDE: f64 = 0.1;

/// `s` targets on a ring of `n` cells. Each step every target moves one cell
/// in its direction, or the opposite way with probability `p`. A target whose
/// destination is already claimed stays put for that step.
pub fn gen_tracking(
    n: usize,
    s: usize,
    steps: usize,
    innovation_prob: f64,
    seed: u64,
) -> Result<TrackingDataset> {
    if steps == 0 {
        return Err(SblError::InvalidInput("need at least one time step".into()));
    }
    if s == 0 || s > n {
        return Err(SblError::InvalidInput(format!(
            "need 1 <= s <= n, got s = {s} n = {n}"
        )));
    }
    if !(0.0..=1.0).contains(&innovation_prob) {
        return Err(SblError::InvalidInput(
            "innovation probability must be in [0, 1]".into(),
        ));
    }
    let mut r0 = rng(seed, 0);
    let mut pos = sample(&mut r0, n, s).into_vec();
    pos.sort_unstable();
    let values: Vec<f64> = (0..s)
        .map(|_| {
            let v = normal(&mut r0);
            if v.abs() < MIN_INITIAL_MAGNITUDE {
                MIN_INITIAL_MAGNITUDE * if v < 0.0 { -1.0 } else { 1.0 }
            } else {
                v
            }
        })
        .collect();
    let mut r1 = rng(seed, 1);
    let directions: Vec<i8> = (0..s)
        .map(|_| if r1.random_bool(0.5) { 1 } else { -1 })
        .collect();
    let mut r2 = rng(seed, 2);

    let place = |pos: &[usize]| {
        let mut x = DVector::zeros(n);
        for (k, &i) in pos.iter().enumerate() {
            x[i] = values[k];
        }
        x
    };
    let mut x_true = vec![place(&pos)];
    let mut dynamics = Vec::with_capacity(steps - 1);
    for _ in 1..steps {
        let intended: Vec<i8> = directions.clone();
        let actual: Vec<i8> = directions
            .iter()
            .map(|&d| {
                if innovation_prob > 0.0 && r2.random_bool(innovation_prob) {
                    -d
                } else {
                    d
                }
            })
            .collect();
        let planned = resolve_moves(n, &pos, &intended);
        let mut f = DMatrix::zeros(n, n);
        for (k, &from) in pos.iter().enumerate() {
            f[(planned[k], from)] = 1.0;
        }
        dynamics.push(f);
        pos = resolve_moves(n, &pos, &actual);
        x_true.push(place(&pos));
    }
    Ok(TrackingDataset {
        x_true,
        dynamics,
        directions,
        innovation_prob,
        seed,
    })
}

/// New positions for one step. Targets move in index order; a destination
/// that an earlier target claimed, or that a later target still occupies,
/// makes the mover stay.
fn resolve_moves(n: usize, pos: &[usize], dirs: &[i8]) -> Vec<usize> {
    let mut next = pos.to_vec();
    for k in 0..pos.len() {
        let dest = (pos[k] as isize + dirs[k] as isize).rem_euclid(n as isize) as usize;
        let taken = next[..k].contains(&dest) || pos[k + 1..].contains(&dest);
        if !taken {
            next[k] = dest;
        }
    }
    next
}

impl TrackingDataset {
    pub fn n(&self) -> usize {
        self.x_true[0].len()
    }

    pub fn steps(&self) -> usize {
        self.x_true.len()
    }

    /// Noisy measurements of every step, each from its own derived seed.
    pub fn measure(
        &self,
        dict: &Dictionary,
        sigma_obs2: f64,
        seed: u64,
    ) -> Result<Vec<DVector<f64>>> {
        self.x_true
            .iter()
            .enumerate()
            .map(|(t, x)| measure(dict, x, sigma_obs2, seed ^ (t as u64 + 1).rotate_left(32)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn coherent(c: f64) -> DictModel {
        DictModel {
            kind: DictKind::LocalCoherent,
            structure: Structure::Param(c),
            block_size: 4,
        }
    }

    #[test]
    fn preset_blocks() {
        let b = block_mixing(8, 4, 0.8);
        for r in 0..8 {
            for c in 0..8 {
                let want = if r == c {
                    1.0
                } else if r / 4 == c / 4 {
                    0.8
                } else {
                    0.0
                };
                assert_eq!(b[(r, c)], want);
            }
        }
        let model = DictModel {
            kind: DictKind::LocalCoherent,
            structure: Structure::Preset,
            block_size: 4,
        };
        let d = gen_dictionary(6, 8, &model, 3).unwrap();
        let base = gen_dictionary(6, 8, &DictModel::iid(), 3).unwrap();
        // Φ is a rescaled Φ̃B
        let raw = base.phi() * block_mixing(8, 4, 0.8);
        let ratio = d.phi()[(0, 0)] / raw[(0, 0)];
        assert!((d.phi() - raw * ratio).amax() < 1e-12);
    }

    #[test]
    fn unit_structure_is_iid() {
        let iid = gen_dictionary(10, 20, &DictModel::iid(), 77).unwrap();
        for kind in [
            DictKind::IidScaled,
            DictKind::LocalCoherent,
            DictKind::LocalCoherentScaled,
        ] {
            let m = DictModel {
                kind,
                structure: Structure::Param(1.0),
                block_size: 4,
            };
            assert_eq!(gen_dictionary(10, 20, &m, 77).unwrap(), iid);
        }
    }

    #[test]
    fn generators_are_deterministic() {
        let m = DictModel {
            kind: DictKind::LocalCoherentScaled,
            structure: Structure::Param(3.0),
            block_size: 4,
        };
        assert_eq!(
            gen_dictionary(8, 16, &m, 5).unwrap(),
            gen_dictionary(8, 16, &m, 5).unwrap()
        );
        let sm = SignalModel {
            kind: SignalKind::GaussianNonzeros,
            s: 3,
        };
        assert_eq!(
            gen_sparse_signal(16, &sm, 9).unwrap(),
            gen_sparse_signal(16, &sm, 9).unwrap()
        );
        assert_eq!(
            gen_tracking(30, 4, 6, 0.2, 1).unwrap(),
            gen_tracking(30, 4, 6, 0.2, 1).unwrap()
        );
    }

    #[test]
    fn blocked_kinds_need_divisible_width() {
        assert!(gen_dictionary(4, 10, &coherent(2.0), 0).is_err());
        assert!(gen_dictionary(4, 12, &coherent(0.5), 0).is_err());
    }

    #[test]
    fn snr_parity() {
        for kind in [
            DictKind::IidScaled,
            DictKind::LocalCoherent,
            DictKind::LocalCoherentScaled,
        ] {
            let m = DictModel {
                kind,
                structure: Structure::Param(4.0),
                block_size: 4,
            };
            let seed = 12;
            let d = gen_dictionary(10, 24, &m, seed).unwrap();
            let base = gen_dictionary(10, 24, &DictModel::iid(), seed).unwrap();
            let mut r2 = rng(seed, 2);
            let x_ref = DVector::from_fn(24, |_, _| normal(&mut r2));
            let a = (d.phi() * &x_ref).norm();
            let b = (base.phi() * &x_ref).norm();
            assert!((a - b).abs() < 1e-10 * b);
        }
    }

    fn max_block_coherence(d: &Dictionary, block: usize) -> f64 {
        let phi = d.phi();
        let mut best = 0.0f64;
        for i in 0..d.n() {
            for j in (i + 1)..d.n() {
                if i / block == j / block {
                    let c = phi.column(i).dot(&phi.column(j)).abs()
                        / (phi.column(i).norm() * phi.column(j).norm());
                    best = best.max(c);
                }
            }
        }
        best
    }

    #[test]
    fn coherence_grows_with_structure() {
        for seed in 0..5 {
            let mut last = 0.0;
            for c in [1.0, 1.5, 2.0, 4.0, 10.0, 100.0] {
                let coh =
                    max_block_coherence(&gen_dictionary(20, 40, &coherent(c), seed).unwrap(), 4);
                assert!(coh >= last - 1e-12, "seed {seed} c {c}: {coh} < {last}");
                last = coh;
            }
        }
    }

    #[test]
    fn signal_examples() {
        let x = gen_sparse_signal(
            4,
            &SignalModel {
                kind: SignalKind::UnitNonzeros,
                s: 2,
            },
            1,
        )
        .unwrap();
        assert_eq!(x.iter().filter(|&&v| v == 1.0).count(), 2);
        assert_eq!(x.iter().filter(|&&v| v == 0.0).count(), 2);
        let g = gen_sparse_signal(
            50,
            &SignalModel {
                kind: SignalKind::GaussianNonzeros,
                s: 7,
            },
            2,
        )
        .unwrap();
        assert_eq!(g.iter().filter(|&&v| v != 0.0).count(), 7);
    }

    #[test]
    fn measurement_examples() {
        let d = gen_dictionary(5, 8, &DictModel::iid(), 0).unwrap();
        assert_eq!(
            measure(&d, &DVector::zeros(8), 0.0, 1).unwrap(),
            DVector::zeros(5)
        );
        let x = DVector::from_fn(8, |i, _| i as f64);
        assert_eq!(measure(&d, &x, 0.0, 1).unwrap(), d.phi() * &x);
    }

    #[test]
    fn measurement_noise_variance() {
        let m = 100_000;
        let d = Dictionary::new(DMatrix::zeros(m, 1)).unwrap();
        let y = measure(&d, &DVector::zeros(1), 0.04, 3).unwrap();
        let mean = y.mean();
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m as f64 - 1.0);
        assert!((var / 0.04 - 1.0).abs() < 0.05, "{var}");
    }

    #[test]
    fn corruption_examples() {
        let x = DVector::from_vec(vec![1.0, 0.0, -2.0, 0.0, 0.0]);
        assert_eq!(
            corrupt_prediction(&x, SupportError::Swaps(0), 0.0, 1).unwrap(),
            x
        );
        let two = DVector::from_vec(vec![1.0, 0.0]);
        assert_eq!(
            corrupt_prediction(&two, SupportError::Swaps(1), 0.0, 4)
                .unwrap()
                .as_slice(),
            &[0.0, 1.0]
        );
        assert!(corrupt_prediction(&two, SupportError::Swaps(2), 0.0, 4).is_err());
        for seed in 0..20 {
            let c = corrupt_prediction(&x, SupportError::Swaps(2), 0.0, seed).unwrap();
            assert_eq!(c.iter().filter(|&&v| v != 0.0).count(), 2);
            let p = corrupt_prediction(&x, SupportError::SwapProb(0.5), 0.0, seed).unwrap();
            assert_eq!(p.iter().filter(|&&v| v != 0.0).count(), 2);
        }
    }

    #[test]
    fn clamp_of_small_initial_values() {
        // find a seed whose initial draw has a small entry and check the clamp
        for seed in 0..200 {
            let ds = gen_tracking(40, 10, 1, 0.0, seed).unwrap();
            for &v in ds.x_true[0].iter().filter(|v| **v != 0.0) {
                assert!(v.abs() >= MIN_INITIAL_MAGNITUDE);
            }
        }
        let mut saw_clamp = false;
        for seed in 0..200 {
            let ds = gen_tracking(40, 10, 1, 0.0, seed).unwrap();
            saw_clamp |= ds.x_true[0]
                .iter()
                .any(|v| v.abs() == MIN_INITIAL_MAGNITUDE);
        }
        assert!(saw_clamp);
    }

    #[test]
    fn no_innovation_follows_the_dynamics() {
        let ds = gen_tracking(30, 5, 12, 0.0, 8).unwrap();
        for t in 1..ds.steps() {
            assert_eq!(ds.x_true[t], &ds.dynamics[t - 1] * &ds.x_true[t - 1]);
        }
    }

    #[test]
    fn moves_are_single_cells_with_wrap() {
        let ds = gen_tracking(12, 3, 20, 0.3, 2).unwrap();
        for t in 1..ds.steps() {
            let prev: Vec<usize> = (0..12).filter(|&i| ds.x_true[t - 1][i] != 0.0).collect();
            for i in (0..12).filter(|&i| ds.x_true[t][i] != 0.0) {
                assert!(prev
                    .iter()
                    .any(|&p| p == i || (p + 1) % 12 == i || (i + 1) % 12 == p));
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn sparsity_is_preserved(n in 4usize..40, frac in 0.05f64..1.0, p in 0.0f64..1.0, seed in 0u64..1000) {
            let s = ((n as f64 * frac) as usize).clamp(1, n);
            let ds = gen_tracking(n, s, 8, p, seed).unwrap();
            for x in &ds.x_true {
                prop_assert_eq!(x.iter().filter(|&&v| v != 0.0).count(), s);
            }
        }

        #[test]
        fn trial_seeds_are_distinct(base in any::<u64>(), a in 0u64..1000, b in 0u64..1000) {
            prop_assume!(a != b);
            prop_assert_ne!(trial_seed(base, a), trial_seed(base, b));
        }
    }
}
