//! Association hypotheses in measurement-to-target and target-to-measurement
//! form, conversions between them, counting and enumeration.
//!
//! Both encodings use 1-based indices with 0 as the sentinel: in
//! measurement-to-target form `r[j] = 0` marks clutter, in
//! target-to-measurement form `r_tilde[k] = 0` marks an undetected target.

use serde::Serialize;

use crate::error::{Error, Result};

/// `r[j]` is the target (1-based) that produced measurement `j`, or 0.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct M2THypothesis {
    pub r: Vec<usize>,
    pub targets: usize,
}

/// `r_tilde[k]` is the measurement (1-based) produced by target `k`, or 0.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct T2MHypothesis {
    pub r_tilde: Vec<usize>,
    pub measurements: usize,
}

fn distinct_nonzero(v: &[usize]) -> bool {
    let mut seen: Vec<usize> = v.iter().copied().filter(|x| *x != 0).collect();
    let n = seen.len();
    seen.sort_unstable();
    seen.dedup();
    seen.len() == n
}

impl M2THypothesis {
    pub fn new(r: Vec<usize>, targets: usize) -> Result<Self> {
        if let Some(bad) = r.iter().find(|x| **x > targets) {
            return Err(Error::InvalidHypothesis(format!(
                "target {bad} exceeds K = {targets}"
            )));
        }
        if !distinct_nonzero(&r) {
            return Err(Error::InvalidHypothesis(format!(
                "target assigned twice in {r:?}"
            )));
        }
        Ok(Self { r, targets })
    }

    pub fn m_target(&self) -> usize {
        self.r.iter().filter(|x| **x != 0).count()
    }

    pub fn m_clutter(&self) -> usize {
        self.r.len() - self.m_target()
    }
}

impl T2MHypothesis {
    pub fn new(r_tilde: Vec<usize>, measurements: usize) -> Result<Self> {
        if let Some(bad) = r_tilde.iter().find(|x| **x > measurements) {
            return Err(Error::InvalidHypothesis(format!(
                "measurement {bad} exceeds M = {measurements}"
            )));
        }
        if !distinct_nonzero(&r_tilde) {
            return Err(Error::InvalidHypothesis(format!(
                "measurement assigned twice in {r_tilde:?}"
            )));
        }
        Ok(Self {
            r_tilde,
            measurements,
        })
    }

    pub fn m_target(&self) -> usize {
        self.r_tilde.iter().filter(|x| **x != 0).count()
    }

    pub fn m_clutter(&self) -> usize {
        self.measurements - self.m_target()
    }
}

pub fn t2m_from_m2t(h: &M2THypothesis, targets: usize) -> Result<T2MHypothesis> {
    let h = M2THypothesis::new(h.r.clone(), targets)?;
    let mut r_tilde = vec![0; targets];
    for (j, &k) in h.r.iter().enumerate() {
        if k != 0 {
            r_tilde[k - 1] = j + 1;
        }
    }
    T2MHypothesis::new(r_tilde, h.r.len())
}

pub fn m2t_from_t2m(h: &T2MHypothesis, measurements: usize) -> Result<M2THypothesis> {
    let h = T2MHypothesis::new(h.r_tilde.clone(), measurements)?;
    let mut r = vec![0; measurements];
    for (k, &j) in h.r_tilde.iter().enumerate() {
        if j != 0 {
            r[j - 1] = k + 1;
        }
    }
    M2THypothesis::new(r, h.r_tilde.len())
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

fn falling(n: usize, k: usize) -> u128 {
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128)
}

/// Number of valid joint hypotheses for `k` targets and `m` measurements:
/// `sum_t C(k, t) * m! / (m - t)!` over `t = 0..=min(k, m)`.
pub fn hypothesis_count(k: usize, m: usize) -> u128 {
    (0..=k.min(m)).map(|t| binomial(k, t) * falling(m, t)).sum()
}

/// Depth-first enumeration over targets in order; each target is tried as
/// undetected first, then with each of its validated measurements (1-based,
/// ascending) not used by an earlier target.
pub fn enumerate_hypotheses(
    targets: usize,
    measurements: usize,
    validated: &[Vec<usize>],
) -> Result<Vec<T2MHypothesis>> {
    if validated.len() != targets {
        return Err(Error::InvalidArgument(format!(
            "{} validation sets for {targets} targets",
            validated.len()
        )));
    }
    let mut sets: Vec<Vec<usize>> = Vec::with_capacity(targets);
    for v in validated {
        if let Some(bad) = v.iter().find(|j| **j == 0 || **j > measurements) {
            return Err(Error::InvalidArgument(format!(
                "validated measurement {bad} outside 1..={measurements}"
            )));
        }
        let mut s = v.clone();
        s.sort_unstable();
        s.dedup();
        sets.push(s);
    }
    let mut out = Vec::new();
    let mut used = vec![false; measurements + 1];
    let mut current = vec![0; targets];
    descend(0, &sets, &mut used, &mut current, measurements, &mut out);
    Ok(out)
}

fn descend(
    k: usize,
    sets: &[Vec<usize>],
    used: &mut [bool],
    current: &mut [usize],
    measurements: usize,
    out: &mut Vec<T2MHypothesis>,
) {
    if k == sets.len() {
        out.push(T2MHypothesis {
            r_tilde: current.to_vec(),
            measurements,
        });
        return;
    }
    current[k] = 0;
    descend(k + 1, sets, used, current, measurements, out);
    for &j in &sets[k] {
        if !used[j] {
            used[j] = true;
            current[k] = j;
            descend(k + 1, sets, used, current, measurements, out);
            used[j] = false;
        }
    }
    current[k] = 0;
}

/// All hypotheses without gating.
pub fn all_hypotheses(targets: usize, measurements: usize) -> Vec<T2MHypothesis> {
    let all: Vec<usize> = (1..=measurements).collect();
    enumerate_hypotheses(targets, measurements, &vec![all; targets])
        .expect("full validation sets are in range")
}
