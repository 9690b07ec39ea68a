//! Block schedules: which operators are re-evaluated at each iteration.
//!
//! A schedule maps an iteration counter `n` to a nonempty block `I_n` of
//! operator indices (0-based here; configuration files use 1-based indices).
//! It carries a covering constant `K`: every window of `K` consecutive blocks
//! must activate every index at least once.

mod concentrating;

use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use concentrating::{
    check_concentrating, lag_identity_check, mu_row, ConcentratingReport, ConcentratingRow,
    ROW_SUM_TOLERANCE,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("schedule needs m >= 1 and K >= 1 (got m = {m}, K = {k})")]
    Degenerate { m: usize, k: usize },
    #[error("infeasible schedule: {0}")]
    Infeasible(String),
    #[error("block {n} is empty")]
    EmptyBlock { n: usize },
    #[error("block {n} contains index {index} outside 0..{m}")]
    IndexOutOfRange { n: usize, index: usize, m: usize },
    #[error("covering violated: index {missing} absent from blocks {window_start}..{window_end}")]
    CoveringViolation {
        window_start: usize,
        window_end: usize,
        missing: usize,
    },
    #[error("index {index} not activated in window ending at {n}")]
    NotActivated { index: usize, n: usize },
    #[error("last-activation index requires n >= K - 1 (n = {n}, K = {k})")]
    BeforeFirstWindow { n: usize, k: usize },
    #[error("horizon {horizon} shorter than covering constant {k}")]
    HorizonTooShort { horizon: usize, k: usize },
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
}

pub type Block = Arc<[usize]>;

#[derive(Debug)]
struct QuasicyclicState {
    rng: ChaCha8Rng,
    /// Last step at which each index was activated, or -1.
    last: Vec<i64>,
    blocks: Vec<Block>,
}

#[derive(Debug, Clone)]
enum Kind {
    Cyclic { block_size: usize },
    Explicit { blocks: Arc<[Block]> },
    Quasicyclic {
        seed: u64,
        state: Arc<Mutex<QuasicyclicState>>,
    },
}

/// A deterministic block schedule with covering constant `K`.
#[derive(Debug, Clone)]
pub struct BlockSchedule {
    m: usize,
    k: usize,
    kind: Kind,
}

impl BlockSchedule {
    /// Consecutive windows of `block_size` indices, wrapping modulo `m`.
    /// The covering constant is `ceil(m / block_size)`.
    pub fn cyclic(m: usize, block_size: usize) -> Result<Self, ScheduleError> {
        if m == 0 {
            return Err(ScheduleError::Degenerate { m, k: 0 });
        }
        if block_size == 0 || block_size > m {
            return Err(ScheduleError::Infeasible(format!(
                "block size {block_size} must lie in 1..={m}"
            )));
        }
        Ok(BlockSchedule {
            m,
            k: m.div_ceil(block_size),
            kind: Kind::Cyclic { block_size },
        })
    }

    /// Every operator at every iteration (`K = 1`).
    pub fn full(m: usize) -> Result<Self, ScheduleError> {
        Self::cyclic(m, m)
    }

    /// A repeating list of blocks with a declared covering constant.
    pub fn explicit(m: usize, blocks: Vec<Vec<usize>>, k: usize) -> Result<Self, ScheduleError> {
        if m == 0 || k == 0 {
            return Err(ScheduleError::Degenerate { m, k });
        }
        if blocks.is_empty() {
            return Err(ScheduleError::Infeasible("no blocks given".into()));
        }
        let mut out = Vec::with_capacity(blocks.len());
        for (n, mut b) in blocks.into_iter().enumerate() {
            if b.is_empty() {
                return Err(ScheduleError::EmptyBlock { n });
            }
            if let Some(&index) = b.iter().find(|&&i| i >= m) {
                return Err(ScheduleError::IndexOutOfRange { n, index, m });
            }
            b.sort_unstable();
            b.dedup();
            out.push(Block::from(b));
        }
        Ok(BlockSchedule {
            m,
            k,
            kind: Kind::Explicit {
                blocks: out.into(),
            },
        })
    }

    /// Seeded random blocks with sweep completion: any index not activated
    /// during the previous `K - 1` steps is forced into the current block, so
    /// the covering condition holds by construction.
    pub fn quasicyclic_random(m: usize, k: usize, seed: u64) -> Result<Self, ScheduleError> {
        if m == 0 || k == 0 {
            return Err(ScheduleError::Degenerate { m, k });
        }
        let state = QuasicyclicState {
            rng: ChaCha8Rng::seed_from_u64(seed),
            last: vec![-1; m],
            blocks: Vec::new(),
        };
        Ok(BlockSchedule {
            m,
            k,
            kind: Kind::Quasicyclic {
                seed,
                state: Arc::new(Mutex::new(state)),
            },
        })
    }

    /// Same blocks, different declared covering constant.
    pub fn with_covering_constant(mut self, k: usize) -> Result<Self, ScheduleError> {
        if k == 0 {
            return Err(ScheduleError::Degenerate { m: self.m, k });
        }
        if let Kind::Quasicyclic { seed, .. } = self.kind {
            // the generator depends on K; rebuild it
            return Self::quasicyclic_random(self.m, k, seed);
        }
        self.k = k;
        Ok(self)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Covering constant `K`.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn is_full_activation(&self) -> bool {
        matches!(self.kind, Kind::Cyclic { block_size } if block_size == self.m)
    }

    /// The block `I_n`, sorted ascending.
    pub fn block(&self, n: usize) -> Block {
        match &self.kind {
            Kind::Cyclic { block_size } => {
                let start = (n * block_size) % self.m;
                let mut b: Vec<usize> = (0..*block_size).map(|j| (start + j) % self.m).collect();
                b.sort_unstable();
                b.into()
            }
            Kind::Explicit { blocks } => blocks[n % blocks.len()].clone(),
            Kind::Quasicyclic { state, .. } => {
                let mut st = state.lock().expect("schedule state poisoned");
                while st.blocks.len() <= n {
                    let step = st.blocks.len();
                    let b = next_quasicyclic_block(&mut st, self.m, self.k, step);
                    st.blocks.push(b);
                }
                st.blocks[n].clone()
            }
        }
    }

    /// Length of the repeating pattern, when the blocks repeat.
    pub fn period(&self) -> Option<usize> {
        match &self.kind {
            Kind::Cyclic { block_size } => {
                let (mut a, mut b) = (self.m, *block_size);
                while b != 0 {
                    (a, b) = (b, a % b);
                }
                Some(self.m / a)
            }
            Kind::Explicit { blocks } => Some(blocks.len()),
            Kind::Quasicyclic { .. } => None,
        }
    }

    /// True when the generator forces every index into each window of `K`
    /// steps, so the covering condition needs no check.
    pub fn covers_by_construction(&self) -> bool {
        matches!(self.kind, Kind::Quasicyclic { .. })
    }

    pub fn contains(&self, n: usize, i: usize) -> bool {
        self.block(n).binary_search(&i).is_ok()
    }
}

fn next_quasicyclic_block(st: &mut QuasicyclicState, m: usize, k: usize, step: usize) -> Block {
    let max_size = m.div_ceil(k).max(1);
    let size = st.rng.random_range(1..=max_size);
    let mut chosen = vec![false; m];
    // partial Fisher-Yates for `size` distinct indices
    let mut pool: Vec<usize> = (0..m).collect();
    for j in 0..size {
        let r = st.rng.random_range(j..m);
        pool.swap(j, r);
        chosen[pool[j]] = true;
    }
    let step = step as i64;
    for (c, &last) in chosen.iter_mut().zip(&st.last) {
        if last <= step - k as i64 {
            *c = true;
        }
    }
    let block: Vec<usize> = (0..m).filter(|&i| chosen[i]).collect();
    for &i in &block {
        st.last[i] = step;
    }
    block.into()
}

/// Checks that every window `[n, n + K - 1]` with `n + K - 1 <= horizon`
/// activates all `m` indices, and that every block is nonempty. Repeating
/// schedules are checked over one period of windows.
pub fn validate_covering(s: &BlockSchedule, horizon: usize) -> Result<(), ScheduleError> {
    let k = s.k();
    if horizon + 1 < k {
        return Err(ScheduleError::HorizonTooShort { horizon, k });
    }
    let horizon = match s.period() {
        Some(p) => horizon.min(p + k - 1),
        None => horizon,
    };
    // sliding window counts
    let mut counts = vec![0usize; s.m()];
    let blocks: Vec<Block> = (0..=horizon).map(|n| s.block(n)).collect();
    for (n, b) in blocks.iter().enumerate() {
        if b.is_empty() {
            return Err(ScheduleError::EmptyBlock { n });
        }
        if let Some(&index) = b.iter().find(|&&i| i >= s.m()) {
            return Err(ScheduleError::IndexOutOfRange { n, index, m: s.m() });
        }
    }
    for b in &blocks[..k - 1] {
        for &i in b.iter() {
            counts[i] += 1;
        }
    }
    for start in 0..=horizon + 1 - k {
        let end = start + k - 1;
        for &i in blocks[end].iter() {
            counts[i] += 1;
        }
        if let Some(missing) = counts.iter().position(|&c| c == 0) {
            return Err(ScheduleError::CoveringViolation {
                window_start: start,
                window_end: end,
                missing,
            });
        }
        for &i in blocks[start].iter() {
            counts[i] -= 1;
        }
    }
    Ok(())
}

/// `c(i, n)`: the most recent step in `{n - K + 1, ..., n}` at which index
/// `i` was activated.
pub fn last_activation(s: &BlockSchedule, i: usize, n: usize) -> Result<usize, ScheduleError> {
    let k = s.k();
    if n + 1 < k {
        return Err(ScheduleError::BeforeFirstWindow { n, k });
    }
    (n + 1 - k..=n)
        .rev()
        .find(|&j| s.contains(j, i))
        .ok_or(ScheduleError::NotActivated { index: i, n })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn singletons(m: usize, k: usize) -> BlockSchedule {
        BlockSchedule::cyclic(m, 1)
            .unwrap()
            .with_covering_constant(k)
            .unwrap()
    }

    #[test]
    fn covering_examples() {
        assert_eq!(validate_covering(&singletons(3, 3), 30), Ok(()));
        assert_eq!(
            validate_covering(&singletons(3, 2), 30),
            Err(ScheduleError::CoveringViolation {
                window_start: 0,
                window_end: 1,
                missing: 2
            })
        );
        assert_eq!(validate_covering(&BlockSchedule::full(2).unwrap(), 10), Ok(()));
        assert!(matches!(
            validate_covering(&singletons(3, 3), 1),
            Err(ScheduleError::HorizonTooShort { .. })
        ));
    }

    #[test]
    fn last_activation_examples() {
        let s = singletons(3, 3);
        assert_eq!(last_activation(&s, 0, 2), Ok(0));
        assert_eq!(last_activation(&s, 1, 2), Ok(1));
        assert_eq!(last_activation(&s, 2, 2), Ok(2));

        let full = BlockSchedule::full(4).unwrap();
        for n in 0..20 {
            for i in 0..4 {
                assert_eq!(last_activation(&full, i, n), Ok(n));
            }
        }

        let e = BlockSchedule::explicit(2, vec![vec![0, 1], vec![1]], 2).unwrap();
        assert_eq!(last_activation(&e, 0, 1), Ok(0));
        assert_eq!(last_activation(&e, 1, 1), Ok(1));

        assert!(matches!(
            last_activation(&s, 0, 1),
            Err(ScheduleError::BeforeFirstWindow { .. })
        ));
        let broken = BlockSchedule::explicit(2, vec![vec![0]], 2).unwrap();
        assert_eq!(
            last_activation(&broken, 1, 3),
            Err(ScheduleError::NotActivated { index: 1, n: 3 })
        );
    }

    #[test]
    fn cyclic_examples() {
        let s = BlockSchedule::cyclic(4, 2).unwrap();
        assert_eq!(s.k(), 2);
        assert_eq!(&*s.block(0), &[0, 1]);
        assert_eq!(&*s.block(1), &[2, 3]);
        assert_eq!(&*s.block(2), &[0, 1]);

        let f = BlockSchedule::cyclic(5, 5).unwrap();
        assert_eq!(f.k(), 1);
        assert!(f.is_full_activation());
        assert_eq!(&*f.block(7), &[0, 1, 2, 3, 4]);

        // uneven sizes wrap around
        let w = BlockSchedule::cyclic(5, 2).unwrap();
        assert_eq!(w.k(), 3);
        assert_eq!(&*w.block(2), &[0, 4]);
        assert_eq!(validate_covering(&w, 100), Ok(()));

        assert!(BlockSchedule::cyclic(3, 0).is_err());
        assert!(BlockSchedule::cyclic(3, 4).is_err());
        assert!(BlockSchedule::cyclic(0, 1).is_err());
    }

    #[test]
    fn quasicyclic_is_covering_and_deterministic() {
        let s = BlockSchedule::quasicyclic_random(5, 3, 7).unwrap();
        assert_eq!(validate_covering(&s, 1000), Ok(()));
        let again = BlockSchedule::quasicyclic_random(5, 3, 7).unwrap();
        // query out of order on the second copy
        assert_eq!(again.block(40), s.block(40));
        for n in 0..100 {
            assert_eq!(s.block(n), again.block(n));
            assert!(!s.block(n).is_empty());
        }
    }

    #[test]
    fn window_properties_hold_on_generated_schedules() {
        for seed in 0..20u64 {
            let m = 1 + (seed as usize % 6);
            let k = 1 + (seed as usize % 4);
            let s = BlockSchedule::quasicyclic_random(m, k, seed).unwrap();
            validate_covering(&s, 1000).unwrap();
            for n in (k - 1)..300 {
                for i in 0..m {
                    let c = last_activation(&s, i, n).unwrap();
                    assert!(c + k > n && c <= n);
                    assert!(s.contains(c, i));
                    if s.contains(n, i) {
                        assert_eq!(c, n);
                    }
                }
            }
        }
    }

    #[test]
    fn explicit_rejects_bad_blocks() {
        assert!(matches!(
            BlockSchedule::explicit(2, vec![vec![]], 1),
            Err(ScheduleError::EmptyBlock { n: 0 })
        ));
        assert!(matches!(
            BlockSchedule::explicit(2, vec![vec![2]], 1),
            Err(ScheduleError::IndexOutOfRange { .. })
        ));
    }
}
