//! Tensor-grid representation of the fixed-point unknown `g: ℝ^(n−1) → [1, n]`.
//!
//! Axis 0 is the observer's own signal; axes `1..` are the relayed signals of
//! the peers other than the one whose root is solved for. Values are stored in
//! row-major order (last axis fastest) and evaluated by multilinear
//! interpolation with constant extension outside the box.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::belief::{BeliefCoefficients, GameParams};
use crate::error::{invalid, Error, Result};

/// Tensor grids larger than this are refused.
pub const MAX_GRID_NODES: usize = 100_000_000;
/// The grid backend handles at most this many axes (n ≤ 5).
pub const MAX_GRID_DIM: usize = 4;

const LIPSCHITZ_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub points_per_axis: Vec<usize>,
}

impl GridSpec {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, points_per_axis: Vec<usize>) -> Result<Self> {
        let spec = Self { lower, upper, points_per_axis };
        spec.validate()?;
        Ok(spec)
    }

    /// Same bounds and resolution on every axis.
    pub fn uniform(dim: usize, lower: f64, upper: f64, points: usize) -> Result<Self> {
        Self::new(vec![lower; dim], vec![upper; dim], vec![points; dim])
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self.lower.len();
        if dim == 0 {
            return invalid("grid needs at least one axis");
        }
        if dim > MAX_GRID_DIM {
            return invalid(format!(
                "grid backend supports at most {MAX_GRID_DIM} axes (got {dim}); n must be at most {}",
                MAX_GRID_DIM + 1
            ));
        }
        if self.upper.len() != dim || self.points_per_axis.len() != dim {
            return invalid("grid lower/upper/points must have the same number of axes");
        }
        for d in 0..dim {
            let (lo, hi) = (self.lower[d], self.upper[d]);
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return invalid(format!("grid axis {d}: need finite lower < upper (got {lo}, {hi})"));
            }
            if self.points_per_axis[d] < 2 {
                return invalid(format!("grid axis {d}: need at least 2 points"));
            }
        }
        let total =
            self.points_per_axis.iter().try_fold(1usize, |acc, &p| acc.checked_mul(p)).filter(|&t| t <= MAX_GRID_NODES);
        if total.is_none() {
            return invalid(format!("grid exceeds {MAX_GRID_NODES} nodes"));
        }
        Ok(())
    }

    /// Default box: wide enough that outside it the best response is forced.
    pub fn default_for(params: &GameParams, coeffs: &BeliefCoefficients) -> Result<Self> {
        let dim = params.n - 1;
        if dim > MAX_GRID_DIM {
            return invalid(format!(
                "n = {} needs {dim} grid axes; the grid backend supports at most {MAX_GRID_DIM}",
                params.n
            ));
        }
        let margin = 5.0 * params.sigma().max(params.tau());
        let lower = (1.0 - margin) / coeffs.a_n;
        let upper = (params.n as f64 + margin) / coeffs.a_n;
        Self::uniform(dim, lower, upper, default_points(params.n))
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn node_count(&self) -> usize {
        self.points_per_axis.iter().product()
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        (self.upper[axis] - self.lower[axis]) / (self.points_per_axis[axis] - 1) as f64
    }

    pub fn coordinate(&self, axis: usize, index: usize) -> f64 {
        let last = self.points_per_axis[axis] - 1;
        if index == last {
            self.upper[axis]
        } else {
            self.lower[axis] + (self.upper[axis] - self.lower[axis]) * index as f64 / last as f64
        }
    }

    /// Row-major strides (last axis fastest).
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.dim()];
        for d in (0..self.dim().saturating_sub(1)).rev() {
            strides[d] = strides[d + 1] * self.points_per_axis[d + 1];
        }
        strides
    }

    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for d in (0..self.dim()).rev() {
            idx[d] = flat % self.points_per_axis[d];
            flat /= self.points_per_axis[d];
        }
        idx
    }

    pub fn node(&self, flat: usize) -> Vec<f64> {
        self.multi_index(flat).iter().enumerate().map(|(d, &i)| self.coordinate(d, i)).collect()
    }

    fn same_axis(&self, a: usize, b: usize) -> bool {
        self.lower[a] == self.lower[b]
            && self.upper[a] == self.upper[b]
            && self.points_per_axis[a] == self.points_per_axis[b]
    }
}

/// Default resolution per axis by number of agents.
pub fn default_points(n: usize) -> usize {
    match n {
        0..=2 => 257,
        3 => 65,
        4 => 33,
        _ => 17,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LipschitzReport {
    pub ok: bool,
    pub worst_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGridFunction")]
pub struct GridFunction {
    spec: GridSpec,
    values: Vec<f64>,
    lipschitz: f64,
    codomain: (f64, f64),
}

#[derive(Deserialize)]
struct RawGridFunction {
    spec: GridSpec,
    values: Vec<f64>,
    lipschitz: f64,
    codomain: (f64, f64),
}

impl TryFrom<RawGridFunction> for GridFunction {
    type Error = Error;

    fn try_from(raw: RawGridFunction) -> Result<Self> {
        Self::with_codomain(raw.spec, raw.values, raw.lipschitz, raw.codomain)
    }
}

impl GridFunction {
    /// `values` in row-major order, each within `[1, n]`; `lipschitz` is the
    /// admissible slope `a_n`.
    pub fn new(spec: GridSpec, values: Vec<f64>, lipschitz: f64, n: usize) -> Result<Self> {
        Self::with_codomain(spec, values, lipschitz, (1.0, n as f64))
    }

    fn with_codomain(spec: GridSpec, values: Vec<f64>, lipschitz: f64, codomain: (f64, f64)) -> Result<Self> {
        spec.validate()?;
        if values.len() != spec.node_count() {
            return invalid(format!("grid has {} nodes but {} values were given", spec.node_count(), values.len()));
        }
        if !(lipschitz.is_finite() && lipschitz > 0.0) {
            return invalid(format!("lipschitz parameter must be positive (got {lipschitz})"));
        }
        let (lo, hi) = codomain;
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !(lo..=hi).contains(*v)) {
            return invalid(format!("value {v} at node {i} is outside [{lo}, {hi}]"));
        }
        Ok(Self { spec, values, lipschitz, codomain })
    }

    pub fn constant(spec: GridSpec, value: f64, lipschitz: f64, n: usize) -> Result<Self> {
        let count = spec.node_count();
        Self::new(spec, vec![value; count], lipschitz, n)
    }

    pub fn from_fn(spec: GridSpec, lipschitz: f64, n: usize, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let values = (0..spec.node_count()).map(|i| f(&spec.node(i))).collect();
        Self::new(spec, values, lipschitz, n)
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn codomain(&self) -> (f64, f64) {
        self.codomain
    }

    pub fn dim(&self) -> usize {
        self.spec.dim()
    }

    /// Same grid, new values (validated).
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::with_codomain(self.spec.clone(), values, self.lipschitz, self.codomain)
    }

    pub fn sup_distance(&self, other: &GridFunction) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// Multilinear interpolation with constant extension. Errors on NaN.
    pub fn eval(&self, point: &[f64]) -> Result<f64> {
        if point.len() != self.dim() {
            return invalid(format!("expected a {}-dimensional point, got {}", self.dim(), point.len()));
        }
        if point.iter().any(|v| v.is_nan()) {
            return invalid("cannot evaluate g at NaN");
        }
        Ok(self.interpolate(point))
    }

    /// Unchecked hot-path evaluation; `point.len()` must equal `dim()`.
    pub(crate) fn interpolate(&self, point: &[f64]) -> f64 {
        let dim = self.dim();
        let mut base = [0usize; MAX_GRID_DIM];
        let mut frac = [0f64; MAX_GRID_DIM];
        let mut stride = [0usize; MAX_GRID_DIM];
        let mut acc_stride = 1;
        for d in (0..dim).rev() {
            stride[d] = acc_stride;
            acc_stride *= self.spec.points_per_axis[d];
        }
        for d in 0..dim {
            let last = self.spec.points_per_axis[d] - 1;
            let (lo, hi) = (self.spec.lower[d], self.spec.upper[d]);
            let q = point[d];
            if q <= lo {
                base[d] = 0;
                frac[d] = 0.0;
            } else if q >= hi {
                base[d] = last - 1;
                frac[d] = 1.0;
            } else {
                let pos = (q - lo) / (hi - lo) * last as f64;
                let cell = (pos.floor() as usize).min(last - 1);
                base[d] = cell;
                frac[d] = pos - cell as f64;
            }
        }
        let mut total = 0.0;
        for corner in 0..(1usize << dim) {
            let mut weight = 1.0;
            let mut offset = 0;
            for d in 0..dim {
                let upper = (corner >> d) & 1 == 1;
                weight *= if upper { frac[d] } else { 1.0 - frac[d] };
                offset += (base[d] + upper as usize) * stride[d];
            }
            if weight != 0.0 {
                total += weight * self.values[offset];
            }
        }
        total
    }

    /// Worst adjacent-node slope relative to the admissible slope, over all axes.
    pub fn check_lipschitz(&self) -> LipschitzReport {
        let strides = self.spec.strides();
        let mut worst: f64 = 0.0;
        for (d, &stride) in strides.iter().enumerate() {
            let limit = self.lipschitz * self.spec.spacing(d);
            let points = self.spec.points_per_axis[d];
            for flat in 0..self.values.len() {
                if (flat / stride) % points == points - 1 {
                    continue;
                }
                let slope = (self.values[flat + stride] - self.values[flat]).abs();
                worst = worst.max(slope / limit);
            }
        }
        LipschitzReport { ok: worst <= 1.0 + LIPSCHITZ_SLACK, worst_ratio: worst }
    }

    /// Averages over every permutation of the peer axes (`1..dim`).
    ///
    /// Orbits whose values already agree bit-for-bit are copied, so the
    /// projection is exactly idempotent.
    pub fn symmetrize(&self) -> Result<Self> {
        let dim = self.dim();
        if dim <= 2 {
            return Ok(self.clone());
        }
        for d in 2..dim {
            if !self.spec.same_axis(1, d) {
                return invalid(format!("peer axes 1 and {d} differ; cannot symmetrize"));
            }
        }
        let perms = permutations(dim - 1);
        let strides = self.spec.strides();
        let mut out = vec![0.0; self.values.len()];
        let mut orbit = Vec::with_capacity(perms.len());
        for (flat, slot) in out.iter_mut().enumerate() {
            let idx = self.spec.multi_index(flat);
            let mut canon = idx[1..].to_vec();
            canon.sort_unstable();
            orbit.clear();
            for perm in &perms {
                let mut offset = idx[0] * strides[0];
                for (axis, &p) in perm.iter().enumerate() {
                    offset += canon[p] * strides[axis + 1];
                }
                orbit.push(self.values[offset]);
            }
            *slot = if orbit.iter().all(|v| v.to_bits() == orbit[0].to_bits()) {
                orbit[0]
            } else {
                orbit.iter().sum::<f64>() / orbit.len() as f64
            };
        }
        self.with_values(out)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let dim = self.dim();
        let mut header = String::new();
        for d in 0..dim {
            write!(header, "axis{d},").unwrap();
        }
        header.push_str("value\n");
        out.write_all(header.as_bytes())?;
        let mut line = String::new();
        for (flat, v) in self.values.iter().enumerate() {
            line.clear();
            for x in self.spec.node(flat) {
                write!(line, "{},", fmt_sig17(x)).unwrap();
            }
            writeln!(line, "{}", fmt_sig17(*v)).unwrap();
            out.write_all(line.as_bytes())?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("csv output is ascii")
    }

    /// Reads the CSV layout written by [`GridFunction::write_csv`]. The grid
    /// spec is recovered from the per-axis coordinate columns.
    pub fn read_csv<R: BufRead>(input: R, lipschitz: f64, n: usize) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines.next().ok_or_else(|| Error::InvalidInput("empty csv".into()))??;
        let columns: Vec<&str> = header.trim_end().split(',').collect();
        if columns.last() != Some(&"value") || columns.len() < 2 {
            return invalid("csv header must be axis0,...,value");
        }
        let dim = columns.len() - 1;
        let mut coords: Vec<Vec<f64>> = vec![Vec::new(); dim];
        let mut values = Vec::new();
        for (row, line) in lines.enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let fields: Vec<f64> = line
                .split(',')
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::InvalidInput(format!("csv row {}: {e}", row + 2)))?;
            if fields.len() != dim + 1 {
                return invalid(format!("csv row {} has {} fields", row + 2, fields.len()));
            }
            for d in 0..dim {
                if coords[d].last().is_none_or(|&last| last != fields[d]) && !coords[d].contains(&fields[d]) {
                    coords[d].push(fields[d]);
                }
            }
            values.push(fields[dim]);
        }
        let spec = GridSpec::new(
            coords.iter().map(|c| c[0]).collect(),
            coords.iter().map(|c| *c.last().unwrap()).collect(),
            coords.iter().map(Vec::len).collect(),
        )?;
        Self::new(spec, values, lipschitz, n)
    }
}

/// 17 significant digits in scientific notation; parses back bit-exactly.
pub fn fmt_sig17(v: f64) -> String {
    format!("{v:.16e}")
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    fn extend(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                extend(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    extend(&mut Vec::with_capacity(k), &mut vec![false; k], &mut out);
    out
}
