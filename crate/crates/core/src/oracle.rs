//! Ground-truth Gibbs computations on small trees by exhaustive enumeration
//! of interior spin configurations.
//!
//! Everything here is exact up to floating-point rounding of the final
//! weight sums: per root color, configurations are tallied into an integer
//! histogram indexed by monochromatic-edge count, and weights are recovered
//! as `sum_e count[e] * p^e` with a single power evaluation per exponent.
//! Integer tallies make color-permutation equivariance and parallel
//! determinism exact by construction, not by tolerance.
//!
//! Vertices are addressed by words over `{1..d}`; leaves (and explicit
//! boundary files) are ordered lexicographically by their address word.

use std::io::{BufRead, BufReader, Write as IoWrite};
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::ModelParams;

/// Default cap on interior-configuration enumerations (`q^interior`).
pub const DEFAULT_CONFIG_BUDGET: u64 = 100_000_000;
/// Default cap on boundary enumerations (`q^leaves`).
pub const DEFAULT_BOUNDARY_BUDGET: u64 = 10_000_000;

/// Enumeration budgets for the exact operations.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Budgets {
    /// Max interior configurations per weight computation.
    pub configs: u64,
    /// Max boundary conditions per search.
    pub boundaries: u64,
}

impl Default for Budgets {
    fn default() -> Self {
        Budgets {
            configs: DEFAULT_CONFIG_BUDGET,
            boundaries: DEFAULT_BOUNDARY_BUDGET,
        }
    }
}

/// A boundary condition on the leaves of the height-`n` tree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum BoundarySpec {
    /// Every leaf carries the same color in `1..=q`.
    Pure(usize),
    /// One color per leaf, in lexicographic order of the leaf address words.
    Explicit(Vec<usize>),
}

impl BoundarySpec {
    /// Validates colors and, for explicit boundaries, the leaf count.
    pub fn validate(&self, params: &ModelParams, n: usize) -> Result<()> {
        match self {
            BoundarySpec::Pure(c) => check_color(*c, params.q),
            BoundarySpec::Explicit(colors) => {
                let expected = leaf_count(params.d, n);
                if colors.len() as u128 != expected {
                    return Err(Error::BoundaryLength {
                        d: params.d,
                        n,
                        expected,
                        got: colors.len(),
                    });
                }
                colors.iter().try_for_each(|&c| check_color(c, params.q))
            }
        }
    }

    /// Materializes the per-leaf color vector.
    pub fn to_colors(&self, params: &ModelParams, n: usize) -> Result<Vec<usize>> {
        self.validate(params, n)?;
        let leaves = leaf_count(params.d, n) as usize;
        Ok(match self {
            BoundarySpec::Pure(c) => vec![*c; leaves],
            BoundarySpec::Explicit(colors) => colors.clone(),
        })
    }
}

fn check_color(c: usize, q: usize) -> Result<()> {
    if c >= 1 && c <= q {
        Ok(())
    } else {
        Err(Error::ColorOutOfRange { color: c, q })
    }
}

/// A probability vector over the `q` colors; `probs[i]` is the probability of
/// color `i + 1`. Serializes as a bare JSON array.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct MarginalVector {
    pub probs: Vec<f64>,
}

impl MarginalVector {
    /// Probability of color `c` (1-based).
    pub fn prob(&self, c: usize) -> f64 {
        self.probs[c - 1]
    }

    /// The ratio of color 2 to color 1.
    pub fn ratio(&self) -> f64 {
        self.probs[1] / self.probs[0]
    }
}

/// Per-root-color weight sums over all interior configurations, and their
/// total `Z`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RootWeights {
    /// `w[i]` sums the weights of configurations whose root carries color `i+1`.
    pub w: Vec<f64>,
    /// The partition function `Z = sum_i w[i]`.
    pub z: f64,
}

impl RootWeights {
    pub fn marginals(&self) -> MarginalVector {
        MarginalVector {
            probs: self.w.iter().map(|wi| wi / self.z).collect(),
        }
    }
}

/// Number of leaves `d^n`.
pub fn leaf_count(d: usize, n: usize) -> u128 {
    (d as u128).pow(n as u32)
}

/// Number of interior (non-leaf) vertices: `(d^n - 1)/(d - 1)`, or `n` for a
/// path (`d = 1`).
pub fn interior_count(d: usize, n: usize) -> u128 {
    if d == 1 {
        n as u128
    } else {
        (leaf_count(d, n) - 1) / (d as u128 - 1)
    }
}

/// Flattened geometry of the height-`n` tree: interior vertices are indexed
/// level by level, each level in leaf-address order.
struct TreeShape {
    d: usize,
    interior: usize,
    leaves: usize,
    edges: usize,
    /// `parent[v]` for interior `v >= 1`.
    parent: Vec<u32>,
    /// Flat index of the parent of leaf `j` is `leaf_parent_base + j / d`.
    leaf_parent_base: usize,
}

impl TreeShape {
    fn new(d: usize, n: usize) -> Self {
        assert!(n >= 1);
        let interior = interior_count(d, n) as usize;
        let leaves = leaf_count(d, n) as usize;
        let mut parent = vec![0u32; interior];
        let mut level_start = 0usize;
        let mut level_len = 1usize;
        // Walk interior levels 0..n-1; children of (level l, j) sit at
        // in-level index j*d + c on level l+1.
        let mut next_start = 1usize;
        for _level in 1..n {
            let next_len = level_len * d;
            for j in 0..next_len {
                parent[next_start + j] = (level_start + j / d) as u32;
            }
            level_start = next_start;
            level_len = next_len;
            next_start += next_len;
        }
        let leaf_parent_base = level_start;
        TreeShape {
            d,
            interior,
            leaves,
            edges: interior + leaves - 1,
            parent,
            leaf_parent_base,
        }
    }

    /// Monochromatic edges of the configuration `cfg` (0-based interior
    /// colors) against 0-based leaf colors.
    #[inline]
    fn mono_edges(&self, cfg: &[u8], leaf_colors: &[u8]) -> usize {
        let mut e = 0usize;
        for v in 1..self.interior {
            e += (cfg[v] == cfg[self.parent[v] as usize]) as usize;
        }
        let base = self.leaf_parent_base;
        for (j, &c) in leaf_colors.iter().enumerate() {
            e += (c == cfg[base + j / self.d]) as usize;
        }
        e
    }
}

/// Integer tally of configurations by (root color, monochromatic edges).
#[derive(Clone)]
struct WeightHistogram {
    q: usize,
    stride: usize,
    counts: Vec<u64>,
}

impl WeightHistogram {
    fn new(q: usize, edges: usize) -> Self {
        WeightHistogram {
            q,
            stride: edges + 1,
            counts: vec![0; q * (edges + 1)],
        }
    }

    #[inline]
    fn record(&mut self, root_color: u8, mono: usize) {
        self.counts[root_color as usize * self.stride + mono] += 1;
    }

    fn merge(&mut self, other: &WeightHistogram) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    /// Weight sums `w[i] = sum_e count[i][e] p^e`, accumulated in ascending
    /// exponent order.
    fn weights(&self, p: f64) -> RootWeights {
        let pow: Vec<f64> = (0..self.stride).map(|e| p.powi(e as i32)).collect();
        let mut w = vec![0.0; self.q];
        for (i, wi) in w.iter_mut().enumerate() {
            let row = &self.counts[i * self.stride..(i + 1) * self.stride];
            let mut acc = 0.0;
            for (e, &cnt) in row.iter().enumerate() {
                if cnt > 0 {
                    acc += cnt as f64 * pow[e];
                }
            }
            *wi = acc;
        }
        let z = w.iter().sum();
        RootWeights { w, z }
    }
}

/// Writes interior-configuration digits of `index` into `cfg` (root is the
/// most significant digit).
fn decode_config(mut index: u128, q: usize, cfg: &mut [u8]) {
    for slot in cfg.iter_mut().rev() {
        *slot = (index % q as u128) as u8;
        index /= q as u128;
    }
}

/// Odometer increment in the same digit order; returns false on wrap.
fn next_config(q: usize, cfg: &mut [u8]) -> bool {
    for slot in cfg.iter_mut().rev() {
        *slot += 1;
        if (*slot as usize) < q {
            return true;
        }
        *slot = 0;
    }
    false
}

fn histogram_for_range(
    shape: &TreeShape,
    q: usize,
    leaf_colors: &[u8],
    start: u128,
    len: usize,
) -> WeightHistogram {
    let mut hist = WeightHistogram::new(q, shape.edges);
    let mut cfg = vec![0u8; shape.interior];
    decode_config(start, q, &mut cfg);
    for _ in 0..len {
        hist.record(cfg[0], shape.mono_edges(&cfg, leaf_colors));
        next_config(q, &mut cfg);
    }
    hist
}

/// Chunked enumeration of all `q^interior` configurations. Chunk boundaries
/// depend only on the problem size, and integer histograms merge
/// associatively, so results are identical for every worker count.
fn full_histogram(shape: &TreeShape, q: usize, leaf_colors: &[u8], total: u128) -> WeightHistogram {
    const CHUNK: u128 = 1 << 14;
    if total <= CHUNK {
        return histogram_for_range(shape, q, leaf_colors, 0, total as usize);
    }
    let n_chunks = total.div_ceil(CHUNK) as usize;
    let partials: Vec<WeightHistogram> = (0..n_chunks)
        .into_par_iter()
        .map(|i| {
            let start = i as u128 * CHUNK;
            let len = (total - start).min(CHUNK) as usize;
            histogram_for_range(shape, q, leaf_colors, start, len)
        })
        .collect();
    let mut hist = WeightHistogram::new(q, shape.edges);
    for part in &partials {
        hist.merge(part);
    }
    hist
}

fn config_total(params: &ModelParams, n: usize, budget: u64) -> Result<u128> {
    let interior = interior_count(params.d, n);
    let required = (params.q as u128)
        .checked_pow(u32::try_from(interior).unwrap_or(u32::MAX))
        .unwrap_or(u128::MAX);
    if required > budget as u128 {
        return Err(Error::BudgetExceeded {
            what: "interior configuration enumeration",
            required,
            budget: budget as u128,
        });
    }
    Ok(required)
}

fn leaf_colors_zero_based(params: &ModelParams, n: usize, xi: &BoundarySpec) -> Result<Vec<u8>> {
    let colors = xi.to_colors(params, n)?;
    Ok(colors.iter().map(|&c| (c - 1) as u8).collect())
}

/// Exact per-root-color weight sums for boundary `xi` on the height-`n`
/// tree, by enumeration of all interior configurations. Monochromatic edges
/// are counted over every parent-child pair, leaf edges included.
pub fn root_weights_exact(
    params: &ModelParams,
    n: usize,
    xi: &BoundarySpec,
) -> Result<RootWeights> {
    root_weights_exact_with_budget(params, n, xi, DEFAULT_CONFIG_BUDGET)
}

pub fn root_weights_exact_with_budget(
    params: &ModelParams,
    n: usize,
    xi: &BoundarySpec,
    config_budget: u64,
) -> Result<RootWeights> {
    if n < 1 {
        return Err(Error::InvalidParameter {
            field: "n",
            value: n as f64,
            constraint: "tree height must be >= 1",
        });
    }
    let total = config_total(params, n, config_budget)?;
    let leaf_colors = leaf_colors_zero_based(params, n, xi)?;
    let shape = TreeShape::new(params.d, n);
    let hist = full_histogram(&shape, params.q, &leaf_colors, total);
    Ok(hist.weights(params.p))
}

/// Exact root marginals: [`root_weights_exact`] normalized by `Z`.
pub fn root_marginals_exact(
    params: &ModelParams,
    n: usize,
    xi: &BoundarySpec,
) -> Result<MarginalVector> {
    Ok(root_weights_exact(params, n, xi)?.marginals())
}

pub fn root_marginals_exact_with_budget(
    params: &ModelParams,
    n: usize,
    xi: &BoundarySpec,
    config_budget: u64,
) -> Result<MarginalVector> {
    Ok(root_weights_exact_with_budget(params, n, xi, config_budget)?.marginals())
}

/// Result of the exhaustive ratio maximization over boundary conditions.
#[derive(Debug, Clone, Serialize)]
pub struct MaxRatio {
    /// `max_xi mu[2]/mu[1]`.
    pub r_star: f64,
    /// All boundaries within relative 1e-12 of the maximum, in enumeration
    /// order. Color symmetry guarantees ties; they are reported, not hidden.
    pub witnesses: Vec<BoundarySpec>,
}

const TIE_REL_TOL: f64 = 1e-12;

fn boundary_total(params: &ModelParams, n: usize, budget: u64) -> Result<u128> {
    let leaves = leaf_count(params.d, n);
    let required = (params.q as u128)
        .checked_pow(u32::try_from(leaves).unwrap_or(u32::MAX))
        .unwrap_or(u128::MAX);
    if required > budget as u128 {
        return Err(Error::BudgetExceeded {
            what: "boundary enumeration",
            required,
            budget: budget as u128,
        });
    }
    Ok(required)
}

fn decode_boundary(mut index: u128, q: usize, colors: &mut [u8]) {
    for slot in colors.iter_mut().rev() {
        *slot = (index % q as u128) as u8;
        index /= q as u128;
    }
}

fn next_boundary(q: usize, colors: &mut [u8]) -> bool {
    for slot in colors.iter_mut().rev() {
        *slot += 1;
        if (*slot as usize) < q {
            return true;
        }
        *slot = 0;
    }
    false
}

/// Applies `score` to every boundary of the height-`n` tree and returns the
/// maximum together with every boundary index whose score is within
/// `TIE_REL_TOL` (relative) of it. Deterministic for any worker count.
fn scan_boundaries<F>(
    shape: &TreeShape,
    q: usize,
    total: u128,
    per_boundary_work: u128,
    score: F,
) -> (f64, Vec<u128>)
where
    F: Fn(&TreeShape, &[u8]) -> f64 + Sync,
{
    const CHUNK: u128 = 256;
    let run_range = |start: u128, len: usize| -> (f64, Vec<(u128, f64)>) {
        let mut colors = vec![0u8; shape.leaves];
        decode_boundary(start, q, &mut colors);
        let mut best = f64::NEG_INFINITY;
        let mut near: Vec<(u128, f64)> = Vec::new();
        for off in 0..len {
            let s = score(shape, &colors);
            if s > best {
                best = s;
                near.retain(|&(_, v)| v >= best - TIE_REL_TOL * best.abs());
            }
            if s >= best - TIE_REL_TOL * best.abs() {
                near.push((start + off as u128, s));
            }
            next_boundary(q, &mut colors);
        }
        (best, near)
    };

    // Parallelize only when enough total work exists; the config enumeration
    // inside `score` dominates, so chunks are small.
    let parts: Vec<(f64, Vec<(u128, f64)>)> = if total * per_boundary_work <= 1 << 16 {
        vec![run_range(0, total as usize)]
    } else {
        let n_chunks = total.div_ceil(CHUNK) as usize;
        (0..n_chunks)
            .into_par_iter()
            .map(|i| {
                let start = i as u128 * CHUNK;
                let len = (total - start).min(CHUNK) as usize;
                run_range(start, len)
            })
            .collect()
    };

    let best = parts
        .iter()
        .fold(f64::NEG_INFINITY, |acc, (b, _)| acc.max(*b));
    let mut winners = Vec::new();
    for (_, near) in parts {
        for (idx, s) in near {
            if s >= best - TIE_REL_TOL * best.abs() {
                winners.push(idx);
            }
        }
    }
    (best, winners)
}

fn boundary_from_index(index: u128, q: usize, leaves: usize) -> BoundarySpec {
    let mut colors = vec![0u8; leaves];
    decode_boundary(index, q, &mut colors);
    BoundarySpec::Explicit(colors.iter().map(|&c| c as usize + 1).collect())
}

/// Exhaustively maximizes the root ratio `mu[2]/mu[1]` over all `q^(d^n)`
/// boundary conditions.
pub fn max_ratio_exact(params: &ModelParams, n: usize, budgets: Budgets) -> Result<MaxRatio> {
    let total = boundary_total(params, n, budgets.boundaries)?;
    let configs = config_total(params, n, budgets.configs)?;
    let shape = TreeShape::new(params.d, n);
    let q = params.q;
    let p = params.p;
    let (r_star, winners) = scan_boundaries(&shape, q, total, configs, |shape, colors| {
        let hist = histogram_for_range_seq(shape, q, colors, configs);
        let w = hist.weights(p);
        w.w[1] / w.w[0]
    });
    let witnesses = winners
        .into_iter()
        .map(|idx| boundary_from_index(idx, q, shape.leaves))
        .collect();
    Ok(MaxRatio { r_star, witnesses })
}

fn histogram_for_range_seq(
    shape: &TreeShape,
    q: usize,
    leaf_colors: &[u8],
    total: u128,
) -> WeightHistogram {
    histogram_for_range(shape, q, leaf_colors, 0, total as usize)
}

/// Searches all boundaries for one whose root-color-1 marginal strictly
/// exceeds the pure color-1 boundary's. Returns the best such boundary and
/// the (positive) margin, or `None` when no boundary dominates. The pure
/// boundary itself scores margin 0 and is never returned.
pub fn find_dominating_boundary(
    params: &ModelParams,
    n: usize,
    budgets: Budgets,
) -> Result<Option<(BoundarySpec, f64)>> {
    let total = boundary_total(params, n, budgets.boundaries)?;
    let configs = config_total(params, n, budgets.configs)?;
    let pure = root_weights_exact_with_budget(params, n, &BoundarySpec::Pure(1), budgets.configs)?;
    let pure_mu1 = pure.w[0] / pure.z;

    let shape = TreeShape::new(params.d, n);
    let q = params.q;
    let p = params.p;
    let (best, winners) = scan_boundaries(&shape, q, total, configs, |shape, colors| {
        let hist = histogram_for_range_seq(shape, q, colors, configs);
        let w = hist.weights(p);
        w.w[0] / w.z
    });

    if best <= pure_mu1 || best.is_nan() {
        return Ok(None);
    }
    // Boundary index 0 is the pure color-1 boundary itself; skip it in case
    // it lands inside the tie tolerance of the maximum.
    let Some(&idx) = winners.iter().find(|&&i| i != 0) else {
        return Ok(None);
    };
    let xi = boundary_from_index(idx, q, shape.leaves);
    let w = root_weights_exact_with_budget(params, n, &xi, budgets.configs)?;
    let margin = w.w[0] / w.z - pure_mu1;
    if margin > 0.0 {
        Ok(Some((xi, margin)))
    } else {
        Ok(None)
    }
}

/// Slices a boundary for the height-`n+2` tree into its `d^2` grandchild
/// sub-boundaries of height `n` and returns each subtree's exact root-weight
/// ratio vector `w_k / w_1`, ordered first by the root's child `v`, then by
/// the grandchild `u`. These vectors feed the general two-step function.
pub fn ratio_of_boundary_slices(
    params: &ModelParams,
    n: usize,
    colors: &[usize],
) -> Result<Vec<Vec<f64>>> {
    let expected = leaf_count(params.d, n + 2);
    if colors.len() as u128 != expected {
        return Err(Error::BoundaryLength {
            d: params.d,
            n: n + 2,
            expected,
            got: colors.len(),
        });
    }
    let sub_leaves = leaf_count(params.d, n) as usize;
    let mut out = Vec::with_capacity(params.d * params.d);
    for block in 0..params.d * params.d {
        let slice = colors[block * sub_leaves..(block + 1) * sub_leaves].to_vec();
        let w = root_weights_exact(params, n, &BoundarySpec::Explicit(slice))?;
        out.push(w.w.iter().map(|wi| wi / w.w[0]).collect());
    }
    Ok(out)
}

/// Writes a boundary as one integer color per line, in leaf order.
pub fn write_boundary<W: IoWrite>(mut out: W, colors: &[usize]) -> std::io::Result<()> {
    for c in colors {
        writeln!(out, "{c}")?;
    }
    Ok(())
}

pub fn write_boundary_file(path: &Path, colors: &[usize]) -> Result<()> {
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = std::fs::File::create(path).map_err(io_err)?;
    write_boundary(std::io::BufWriter::new(file), colors).map_err(io_err)
}

/// Parses a boundary file: one integer color per line, leaf order.
pub fn read_boundary_file(path: &Path) -> Result<Vec<usize>> {
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = std::fs::File::open(path).map_err(io_err)?;
    let mut colors = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err)?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let c: usize = trimmed.parse().map_err(|_| {
            Error::Malformed(format!(
                "line {}: expected an integer color, got {trimmed:?}",
                lineno + 1
            ))
        })?;
        if c == 0 {
            return Err(Error::Malformed(format!(
                "line {}: colors are 1-based",
                lineno + 1
            )));
        }
        colors.push(c);
    }
    Ok(colors)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(d: usize, q: usize, p: f64) -> ModelParams {
        ModelParams::new(d, q, p).unwrap()
    }

    #[test]
    fn counts() {
        assert_eq!(leaf_count(3, 2), 9);
        assert_eq!(interior_count(3, 2), 4);
        assert_eq!(interior_count(1, 5), 5);
        assert_eq!(interior_count(2, 3), 7);
    }

    #[test]
    fn star_tree_weights_by_hand() {
        // Height 1, d leaf edges: pure boundary of color 2 makes all d edges
        // monochromatic exactly when the root is color 2.
        let mp = params(3, 3, 0.25);
        let w = root_weights_exact(&mp, 1, &BoundarySpec::Pure(2)).unwrap();
        assert_eq!(w.w, vec![1.0, 0.015625, 1.0]);
        assert_eq!(w.z, 2.015625);

        let mu = w.marginals();
        assert!((mu.prob(2) - 0.015625 / 2.015625).abs() < 1e-15);
        assert!((mu.prob(2) - 0.00775194).abs() < 1e-8);
    }

    #[test]
    fn single_edge_tree() {
        let mp = params(1, 2, 0.5);
        let w = root_weights_exact(&mp, 1, &BoundarySpec::Pure(1)).unwrap();
        assert_eq!(w.w, vec![0.5, 1.0]);
        assert_eq!(w.z, 1.5);
    }

    #[test]
    fn pure_marginal_symmetric_off_color() {
        let mp = params(3, 4, 0.37);
        let mu = root_marginals_exact(&mp, 2, &BoundarySpec::Pure(2)).unwrap();
        for j in [1usize, 3, 4] {
            for k in [1usize, 3, 4] {
                assert!((mu.prob(j) - mu.prob(k)).abs() <= 1e-14);
            }
        }
        let total: f64 = mu.probs.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn near_uniform_when_p_close_to_one() {
        let mp = params(3, 3, 0.999);
        let mu = root_marginals_exact(&mp, 1, &BoundarySpec::Pure(2)).unwrap();
        for c in 1..=3 {
            assert!((mu.prob(c) - 1.0 / 3.0).abs() < 1e-3);
        }
    }

    #[test]
    fn partition_function_continuity_at_p_one() {
        // As p -> 1 every configuration has weight ~1, so Z -> q^interior.
        for (d, q, n) in [(2usize, 3usize, 2usize), (3, 3, 2), (2, 4, 2)] {
            let mp = params(d, q, 1.0 - 1e-9);
            let w = root_weights_exact(&mp, n, &BoundarySpec::Pure(1)).unwrap();
            let expect = (q as f64).powi(interior_count(d, n) as i32);
            assert!(
                (w.z - expect).abs() <= 1e-6 * expect,
                "Z={} vs q^M={expect} for ({d},{q},n={n})",
                w.z
            );
        }
    }

    #[test]
    fn color_permutation_equivariance_is_exact() {
        // w_i(pi . xi) == w_{pi^{-1}(i)}(xi), bitwise.
        let mp = params(2, 3, 0.63);
        let xi = vec![1usize, 3, 2, 1];
        let perms: [[usize; 3]; 3] = [[2, 3, 1], [3, 1, 2], [1, 3, 2]];
        let base = root_weights_exact(&mp, 2, &BoundarySpec::Explicit(xi.clone())).unwrap();
        for perm in perms {
            let permuted: Vec<usize> = xi.iter().map(|&c| perm[c - 1]).collect();
            let w2 = root_weights_exact(&mp, 2, &BoundarySpec::Explicit(permuted)).unwrap();
            for i in 1..=3usize {
                // pi^{-1}(i): the color that pi maps to i.
                let pre = (1..=3).find(|&j| perm[j - 1] == i).unwrap();
                assert_eq!(w2.w[i - 1], base.w[pre - 1], "perm {perm:?} color {i}");
            }
        }
    }

    #[test]
    fn explicit_boundary_validation() {
        let mp = params(2, 3, 0.5);
        let too_short = BoundarySpec::Explicit(vec![1, 2, 3]);
        assert!(matches!(
            root_weights_exact(&mp, 2, &too_short),
            Err(Error::BoundaryLength {
                expected: 4,
                got: 3,
                ..
            })
        ));
        let bad_color = BoundarySpec::Explicit(vec![1, 2, 3, 4]);
        assert!(matches!(
            root_weights_exact(&mp, 2, &bad_color),
            Err(Error::ColorOutOfRange { color: 4, q: 3 })
        ));
        assert!(matches!(
            root_weights_exact(&mp, 2, &BoundarySpec::Pure(0)),
            Err(Error::ColorOutOfRange { color: 0, q: 3 })
        ));
    }

    #[test]
    fn budget_errors_report_required_size() {
        let mp = params(2, 3, 0.5);
        match root_weights_exact_with_budget(&mp, 4, &BoundarySpec::Pure(1), 100) {
            Err(Error::BudgetExceeded {
                required, budget, ..
            }) => {
                assert_eq!(required, 3u128.pow(15));
                assert_eq!(budget, 100);
            }
            other => panic!("expected budget error, got {other:?}"),
        }
        match max_ratio_exact(
            &mp,
            3,
            Budgets {
                configs: 1 << 30,
                boundaries: 100,
            },
        ) {
            Err(Error::BudgetExceeded { required, .. }) => assert_eq!(required, 3u128.pow(8)),
            other => panic!("expected budget error, got {other:?}"),
        }
    }

    #[test]
    fn max_ratio_small_tree() {
        let mp = params(2, 3, 0.5);
        let got = max_ratio_exact(&mp, 1, Budgets::default()).unwrap();
        // Color-swap symmetry guarantees r* >= 1.
        assert!(got.r_star >= 1.0);

        // Determinism check: a second, reverse-order enumeration finds the
        // same maximum.
        let mut best = f64::NEG_INFINITY;
        for idx in (0..9u128).rev() {
            let xi = boundary_from_index(idx, 3, 2);
            let w = root_weights_exact(&mp, 1, &xi).unwrap();
            best = best.max(w.w[1] / w.w[0]);
        }
        assert_eq!(got.r_star, best);

        // Witnesses actually attain the maximum.
        for wit in &got.witnesses {
            let w = root_weights_exact(&mp, 1, wit).unwrap();
            assert!((w.w[1] / w.w[0] - got.r_star).abs() <= 1e-12 * got.r_star);
        }
    }

    #[test]
    fn max_ratio_invariant_under_high_color_relabel() {
        // Swapping colors 3 and 4 maps the witness set onto itself.
        let mp = params(2, 4, 0.4);
        let got = max_ratio_exact(&mp, 1, Budgets::default()).unwrap();
        let perm = [1usize, 2, 4, 3];
        let mut mapped: Vec<Vec<usize>> = got
            .witnesses
            .iter()
            .map(|wit| match wit {
                BoundarySpec::Explicit(cs) => cs.iter().map(|&c| perm[c - 1]).collect(),
                BoundarySpec::Pure(_) => unreachable!(),
            })
            .collect();
        mapped.sort();
        let mut original: Vec<Vec<usize>> = got
            .witnesses
            .iter()
            .map(|wit| match wit {
                BoundarySpec::Explicit(cs) => cs.clone(),
                BoundarySpec::Pure(_) => unreachable!(),
            })
            .collect();
        original.sort();
        assert_eq!(mapped, original);
    }

    #[test]
    fn dominating_boundary_found_at_small_p() {
        let mp = params(3, 3, 0.01);
        let hit = find_dominating_boundary(&mp, 2, Budgets::default()).unwrap();
        let (xi, margin) = hit.expect("a dominating boundary exists at small p");
        assert!(margin > 0.0);
        let w = root_weights_exact(&mp, 2, &xi).unwrap();
        let pure = root_weights_exact(&mp, 2, &BoundarySpec::Pure(1)).unwrap();
        assert!((w.w[0] / w.z) > (pure.w[0] / pure.z));
    }

    #[test]
    fn boundary_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("boundary.txt");
        let colors = vec![1usize, 3, 2, 2, 1, 3, 3, 1, 2];
        write_boundary_file(&path, &colors).unwrap();
        let back = read_boundary_file(&path).unwrap();
        assert_eq!(back, colors);
    }

    #[test]
    fn boundary_file_rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.txt");
        std::fs::write(&path, "1\nx\n2\n").unwrap();
        assert!(matches!(
            read_boundary_file(&path),
            Err(Error::Malformed(_))
        ));
        std::fs::write(&path, "1\n0\n2\n").unwrap();
        assert!(matches!(
            read_boundary_file(&path),
            Err(Error::Malformed(_))
        ));
    }
}
