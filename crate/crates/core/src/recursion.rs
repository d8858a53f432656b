//! Linear-time bottom-up computation of root marginals for arbitrary
//! boundary conditions, and the scalar pure-boundary ratio iteration in
//! cancellation-free deviation coordinates.
//!
//! The bottom-up sweep passes one weight vector per vertex to its parent.
//! A child with vector `m` (any positive scaling of its subtree weights)
//! contributes the factor `sum_j m[j] + (p-1) m[i]` to the parent's weight
//! for color `i`; common scalings cancel in the final normalization, so
//! every level's vectors are renormalized by their maximum entry to keep the
//! sweep clear of underflow at depth.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::maps::MapParams;
use crate::model::ModelParams;
use crate::oracle::{leaf_count, BoundarySpec, MarginalVector};

/// In-memory cap on `n * d^n` for explicit-boundary sweeps.
pub const SWEEP_CAP: u128 = 100_000_000;

/// A ratio near the fixed point, carried as `eps = r - 1`.
///
/// Seeded from a pure boundary, even iterates have `eps >= 0` and odd
/// iterates `eps <= 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Deviation {
    pub eps: f64,
}

impl Deviation {
    pub fn ratio(&self) -> f64 {
        1.0 + self.eps
    }
}

/// Root marginals for boundary `xi` by one bottom-up sweep.
///
/// Agrees with the exhaustive enumeration to 1e-10 per entry wherever that
/// is feasible.
pub fn root_marginals_recursive(
    params: &ModelParams,
    n: usize,
    xi: &BoundarySpec,
) -> Result<MarginalVector> {
    if n < 1 {
        return Err(Error::InvalidParameter {
            field: "n",
            value: n as f64,
            constraint: "tree height must be >= 1",
        });
    }
    match xi {
        // A pure boundary collapses to one message per level.
        BoundarySpec::Pure(c) => {
            xi.validate(params, n)?;
            Ok(pure_sweep(params, n, *c))
        }
        BoundarySpec::Explicit(colors) => {
            let leaves = leaf_count(params.d, n);
            if n as u128 * leaves > SWEEP_CAP {
                return Err(Error::SizeCapExceeded {
                    d: params.d,
                    n,
                    required: n as u128 * leaves,
                    cap: SWEEP_CAP,
                });
            }
            xi.validate(params, n)?;
            explicit_sweep(params, n, colors)
        }
    }
}

/// The ratio `mu[2]/mu[1]` of the recursive root marginals.
pub fn ratio_of(params: &ModelParams, n: usize, xi: &BoundarySpec) -> Result<f64> {
    Ok(root_marginals_recursive(params, n, xi)?.ratio())
}

fn pure_sweep(params: &ModelParams, n: usize, color: usize) -> MarginalVector {
    let q = params.q;
    let p = params.p;
    let d = params.d as i32;
    // First level above the leaves: all d children are leaves of the pure
    // color, so the parent weighs that color by p^d.
    let mut msg = vec![1.0; q];
    msg[color - 1] = p.powi(d);
    for _ in 1..n {
        let s: f64 = msg.iter().sum();
        let mut next: Vec<f64> = msg.iter().map(|&mi| (s + (p - 1.0) * mi).powi(d)).collect();
        let max = next.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        next.iter_mut().for_each(|v| *v /= max);
        msg = next;
    }
    let z: f64 = msg.iter().sum();
    MarginalVector {
        probs: msg.iter().map(|&w| w / z).collect(),
    }
}

fn explicit_sweep(params: &ModelParams, n: usize, colors: &[usize]) -> Result<MarginalVector> {
    let q = params.q;
    let p = params.p;
    let d = params.d;
    // Level n-1 straight from the leaf colors: the parent of a block of d
    // leaves weighs color i by p^{#children colored i}.
    let parents = colors.len() / d;
    let mut pow = vec![1.0; d + 1];
    for e in 1..=d {
        pow[e] = pow[e - 1] * p;
    }
    let mut msgs = vec![0.0f64; parents * q];
    let fill = |j: usize, row: &mut [f64]| {
        let block = &colors[j * d..(j + 1) * d];
        let mut counts = vec![0usize; q];
        for &c in block {
            counts[c - 1] += 1;
        }
        let mut max = f64::NEG_INFINITY;
        for i in 0..q {
            row[i] = pow[counts[i]];
            max = max.max(row[i]);
        }
        row.iter_mut().for_each(|v| *v /= max);
    };
    if parents >= 1 << 12 {
        msgs.par_chunks_mut(q)
            .enumerate()
            .for_each(|(j, row)| fill(j, row));
    } else {
        for j in 0..parents {
            fill(j, &mut msgs[j * q..(j + 1) * q]);
        }
    }
    sweep_to_root(params, msgs, parents, n - 1)
}

fn sweep_to_root(
    params: &ModelParams,
    mut msgs: Vec<f64>,
    mut count: usize,
    levels: usize,
) -> Result<MarginalVector> {
    let q = params.q;
    let p = params.p;
    let d = params.d;
    // Vertices within a level write disjoint output rows, so the level
    // parallelizes freely without changing any result.
    const PAR_THRESHOLD: usize = 1 << 12;
    for _ in 0..levels {
        let parents = count / d;
        let mut next = vec![0.0f64; parents * q];
        let combine = |j: usize, out: &mut [f64], msgs: &[f64]| {
            out.iter_mut().for_each(|v| *v = 1.0);
            for u in 0..d {
                let child = &msgs[(j * d + u) * q..(j * d + u + 1) * q];
                let s: f64 = child.iter().sum();
                for i in 0..q {
                    out[i] *= s + (p - 1.0) * child[i];
                }
            }
            let max = out.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            out.iter_mut().for_each(|v| *v /= max);
        };
        if parents >= PAR_THRESHOLD {
            let msgs_ref = &msgs;
            next.par_chunks_mut(q)
                .enumerate()
                .for_each(|(j, out)| combine(j, out, msgs_ref));
        } else {
            for j in 0..parents {
                combine(j, &mut next[j * q..(j + 1) * q], &msgs);
            }
        }
        msgs = next;
        count = parents;
    }
    let z: f64 = msgs.iter().sum();
    if !(z > 0.0_f64 && z.is_finite()) {
        return Err(Error::Malformed(format!(
            "sweep produced non-normalizable weights (z = {z})"
        )));
    }
    Ok(MarginalVector {
        probs: msgs.iter().map(|&w| w / z).collect(),
    })
}

/// Runs the sweep from caller-supplied subtree statistics: `messages[j]` is
/// any positive scaling of the weight vector of the `j`-th subtree root at a
/// common depth, ordered like the leaves. The message count must be a power
/// `d^k` of the branching factor; `k` levels are swept. For `d = 1` a single
/// message is taken to be the root's own weight vector.
pub fn root_marginals_from_messages(
    params: &ModelParams,
    messages: &[Vec<f64>],
) -> Result<MarginalVector> {
    let d = params.d;
    let q = params.q;
    let count = messages.len();
    let mut levels = 0usize;
    let mut c = count;
    while c > 1 {
        if !c.is_multiple_of(d) || d == 1 {
            return Err(Error::Malformed(format!(
                "message count {count} is not a power of the branching factor {d}"
            )));
        }
        c /= d;
        levels += 1;
    }
    if count == 0 {
        return Err(Error::Malformed("no messages supplied".to_string()));
    }
    let mut flat = Vec::with_capacity(count * q);
    for (j, m) in messages.iter().enumerate() {
        if m.len() != q {
            return Err(Error::Malformed(format!(
                "message {j} has {} entries, expected q = {q}",
                m.len()
            )));
        }
        if m.iter().any(|v| *v <= 0.0 || !v.is_finite()) {
            return Err(Error::Malformed(format!(
                "message {j} has nonpositive entries"
            )));
        }
        flat.extend_from_slice(m);
    }
    sweep_to_root(params, flat, count, levels)
}

/// The pure-boundary deviation sequence `eps_1 .. eps_n`: `eps_1 = p^d - 1`
/// (the height-1 tree gives ratio `p^d`), and each further term applies the
/// one-step map in factored deviation form, so the fixed point is preserved
/// bitwise and no precision is lost as `eps -> 0`.
pub fn pure_deviation_sequence(params: &ModelParams, n: usize) -> Vec<Deviation> {
    let map = MapParams::one_step(*params);
    let mut out = Vec::with_capacity(n);
    let mut eps = params.p.powi(params.d as i32) - 1.0;
    for _ in 0..n {
        out.push(Deviation { eps });
        eps = map
            .deviation(eps)
            .expect("pure iterates stay above the domain threshold");
    }
    out
}

/// Deviation of the boundary-color marginal from `1/q`:
/// `r/(r+q-1) - 1/q = (q-1) eps / (q (q + eps))` with `r = 1 + eps`.
pub fn pure_marginal_deviation(q: usize, eps: f64) -> f64 {
    let qf = q as f64;
    (qf - 1.0) * eps / (qf * (qf + eps))
}

/// The two-valued pure-boundary marginal at height `n`: probability
/// `r/(r+q-1)` at the boundary color, `1/(r+q-1)` elsewhere.
pub fn pure_marginal(params: &ModelParams, n: usize, color: usize) -> Result<MarginalVector> {
    if color < 1 || color > params.q {
        return Err(Error::ColorOutOfRange { color, q: params.q });
    }
    if n < 1 {
        return Err(Error::InvalidParameter {
            field: "n",
            value: n as f64,
            constraint: "tree height must be >= 1",
        });
    }
    let eps = pure_deviation_sequence(params, n).last().unwrap().eps;
    let r = 1.0 + eps;
    let den = r + params.q as f64 - 1.0;
    let mut probs = vec![1.0 / den; params.q];
    probs[color - 1] = r / den;
    Ok(MarginalVector { probs })
}
