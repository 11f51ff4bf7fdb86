//! Periodic grids on the torus, their spline surrogates and derivative norms.
//!
//! Cell `(j, k)` of an `n x n` grid is centred at `((j + 1/2)/n, (k + 1/2)/n)` and stored at
//! index `j * n + k`.
//!
//! CSV layout: a header line `# N=<n> lambda=<lambda> mode=<mode> mass=<mass>` followed by
//! `n` comma-separated rows, row `j` holding cells `(j, 0..n)`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::torus::Vec2;

#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    n: usize,
    values: Vec<f64>,
}

impl DensityGrid {
    pub fn new(n: usize, values: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("grid size must be positive".into()));
        }
        if values.len() != n * n {
            return Err(Error::InvalidArgument(format!(
                "expected {} values for a {n}x{n} grid, got {}",
                n * n,
                values.len()
            )));
        }
        Ok(Self { n, values })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            values: vec![0.0; n * n],
        }
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            n,
            values: vec![1.0; n * n],
        }
    }

    /// Samples `f` at the cell centres.
    pub fn from_fn(n: usize, f: impl Fn(Vec2) -> f64) -> Self {
        let mut values = Vec::with_capacity(n * n);
        for j in 0..n {
            for k in 0..n {
                values.push(f(cell_center(n, j, k)));
            }
        }
        Self { n, values }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.values[j * self.n + k]
    }

    pub fn cell_center(&self, j: usize, k: usize) -> Vec2 {
        cell_center(self.n, j, k)
    }

    /// `(1/n^2) sum values`, the integral of the piecewise-constant grid.
    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() / (self.n * self.n) as f64
    }

    pub fn normalize(&mut self) -> Result<()> {
        let m = self.mass();
        if !(m.abs() > 0.0) || !m.is_finite() {
            return Err(Error::InvalidArgument(format!("cannot normalize a grid of mass {m}")));
        }
        for v in &mut self.values {
            *v /= m;
        }
        Ok(())
    }

    pub fn normalized(mut self) -> Result<Self> {
        self.normalize()?;
        Ok(self)
    }

    pub fn l1_norm(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum::<f64>() / (self.n * self.n) as f64
    }

    pub fn l1_distance(&self, other: &DensityGrid) -> Result<f64> {
        self.check_same(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / (self.n * self.n) as f64)
    }

    pub fn max_abs_difference(&self, other: &DensityGrid) -> Result<f64> {
        self.check_same(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub fn max_deviation_from(&self, level: f64) -> f64 {
        self.values.iter().map(|v| (v - level).abs()).fold(0.0, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self {
            n: self.n,
            values: self.values.iter().map(|v| a * v).collect(),
        }
    }

    /// `a * self + b * other`.
    pub fn combine(&self, a: f64, other: &DensityGrid, b: f64) -> Result<Self> {
        self.check_same(other)?;
        Ok(Self {
            n: self.n,
            values: self.values.iter().zip(&other.values).map(|(x, y)| a * x + b * y).collect(),
        })
    }

    fn check_same(&self, other: &DensityGrid) -> Result<()> {
        if self.n != other.n {
            return Err(Error::InvalidArgument(format!(
                "grid sizes differ: {} vs {}",
                self.n, other.n
            )));
        }
        Ok(())
    }

    pub fn spline(&self) -> PeriodicSpline {
        PeriodicSpline::new(self)
    }

    /// Centred second-order differences `(d_1, d_2)` at every cell.
    pub fn gradient_fd(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.n;
        let half_n = 0.5 * n as f64;
        let mut d1 = vec![0.0; n * n];
        let mut d2 = vec![0.0; n * n];
        for j in 0..n {
            let (jm, jp) = ((j + n - 1) % n, (j + 1) % n);
            for k in 0..n {
                let (km, kp) = ((k + n - 1) % n, (k + 1) % n);
                d1[j * n + k] = (self.get(jp, k) - self.get(jm, k)) * half_n;
                d2[j * n + k] = (self.get(j, kp) - self.get(j, km)) * half_n;
            }
        }
        (d1, d2)
    }

    /// Mean over cells of `|grad|`, with centred differences.
    pub fn gradient_l1(&self) -> f64 {
        let (d1, d2) = self.gradient_fd();
        d1.iter().zip(&d2).map(|(a, b)| a.hypot(*b)).sum::<f64>() / (self.n * self.n) as f64
    }

    /// Mean over cells of the spectral norm of the centred-difference Hessian.
    pub fn hessian_l1(&self) -> f64 {
        let n = self.n;
        let n2 = (n * n) as f64;
        let mut total = 0.0;
        for j in 0..n {
            let (jm, jp) = ((j + n - 1) % n, (j + 1) % n);
            for k in 0..n {
                let (km, kp) = ((k + n - 1) % n, (k + 1) % n);
                let c = self.get(j, k);
                let a = (self.get(jp, k) - 2.0 * c + self.get(jm, k)) * n2;
                let d = (self.get(j, kp) - 2.0 * c + self.get(j, km)) * n2;
                let b = (self.get(jp, kp) - self.get(jp, km) - self.get(jm, kp) + self.get(jm, km)) * 0.25 * n2;
                total += symmetric_spectral_norm(a, b, d);
            }
        }
        total / n2
    }

    pub fn to_csv_string(&self, lambda: f64, mode: usize) -> String {
        let mut out = String::with_capacity(self.values.len() * 24);
        let _ = writeln!(out, "# N={} lambda={} mode={} mass={}", self.n, lambda, mode, self.mass());
        for row in self.values.chunks(self.n) {
            let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path, lambda: f64, mode: usize) -> Result<()> {
        fs::write(path, self.to_csv_string(lambda, mode))?;
        Ok(())
    }

    pub fn from_csv_str(text: &str) -> Result<(Self, CsvHeader)> {
        let mut lines = text.lines();
        let header = CsvHeader::parse(lines.next().ok_or_else(|| Error::Parse("empty grid file".into()))?)?;
        let mut values = Vec::with_capacity(header.n * header.n);
        for (row, line) in lines.filter(|l| !l.trim().is_empty()).enumerate() {
            let before = values.len();
            for field in line.split(',') {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::Parse(format!("row {row}: bad number '{field}'")))?;
                values.push(v);
            }
            if values.len() - before != header.n {
                return Err(Error::Parse(format!(
                    "row {row} has {} entries, expected {}",
                    values.len() - before,
                    header.n
                )));
            }
        }
        let grid = DensityGrid::new(header.n, values).map_err(|e| Error::Parse(e.to_string()))?;
        Ok((grid, header))
    }

    pub fn read_csv(path: &Path) -> Result<(Self, CsvHeader)> {
        Self::from_csv_str(&fs::read_to_string(path)?)
    }

    /// Plain (P2) 8-bit grayscale image scaled so the largest value maps to 255.
    pub fn to_pgm_string(&self) -> String {
        let max = self.max_value();
        let scale = if max > 0.0 { 255.0 / max } else { 0.0 };
        let mut out = format!("P2\n{} {}\n255\n", self.n, self.n);
        for row in self.values.chunks(self.n) {
            let line: Vec<String> = row
                .iter()
                .map(|v| ((v * scale).round().clamp(0.0, 255.0) as u8).to_string())
                .collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_pgm_string())?;
        Ok(())
    }
}

pub fn cell_center(n: usize, j: usize, k: usize) -> Vec2 {
    Vec2::new((j as f64 + 0.5) / n as f64, (k as f64 + 0.5) / n as f64)
}

/// Largest absolute eigenvalue of `[[a, b], [b, d]]`.
pub fn symmetric_spectral_norm(a: f64, b: f64, d: f64) -> f64 {
    0.5 * (a + d).abs() + (0.25 * (a - d).powi(2) + b * b).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsvHeader {
    pub n: usize,
    pub lambda: f64,
    pub mode: usize,
    pub mass: f64,
}

impl CsvHeader {
    fn parse(line: &str) -> Result<Self> {
        let body = line
            .strip_prefix('#')
            .ok_or_else(|| Error::Parse(format!("grid header must start with '#': {line}")))?;
        let mut n = None;
        let mut lambda = None;
        let mut mode = None;
        let mut mass = None;
        for item in body.split_whitespace() {
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("malformed header item '{item}'")))?;
            let bad = || Error::Parse(format!("bad header value '{item}'"));
            match key {
                "N" => n = Some(value.parse().map_err(|_| bad())?),
                "lambda" => lambda = Some(value.parse().map_err(|_| bad())?),
                "mode" => mode = Some(value.parse().map_err(|_| bad())?),
                "mass" => mass = Some(value.parse().map_err(|_| bad())?),
                _ => return Err(Error::Parse(format!("unknown header key '{key}'"))),
            }
        }
        let missing = |k: &str| Error::Parse(format!("grid header is missing '{k}'"));
        Ok(Self {
            n: n.ok_or_else(|| missing("N"))?,
            lambda: lambda.ok_or_else(|| missing("lambda"))?,
            mode: mode.ok_or_else(|| missing("mode"))?,
            mass: mass.ok_or_else(|| missing("mass"))?,
        })
    }
}

/// Periodic cubic B-spline interpolating a grid at its cell centres.
#[derive(Debug, Clone)]
pub struct PeriodicSpline {
    n: usize,
    coeffs: Vec<f64>,
}

impl PeriodicSpline {
    pub fn new(grid: &DensityGrid) -> Self {
        let n = grid.n;
        let kernel = inverse_kernel(n);
        let mut tmp = vec![0.0; n * n];
        // along k (second coordinate)
        for j in 0..n {
            let row = &grid.values[j * n..(j + 1) * n];
            for k in 0..n {
                let mut acc = 0.0;
                for (d, g) in kernel.iter().enumerate() {
                    acc += g * row[(k + n - d) % n];
                }
                tmp[j * n + k] = acc;
            }
        }
        let mut coeffs = vec![0.0; n * n];
        for k in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for (d, g) in kernel.iter().enumerate() {
                    acc += g * tmp[((j + n - d) % n) * n + k];
                }
                coeffs[j * n + k] = acc;
            }
        }
        Self { n, coeffs }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    fn locate(&self, v: f64) -> (usize, f64) {
        let u = v * self.n as f64 - 0.5;
        let fl = u.floor();
        let i = (fl as i64).rem_euclid(self.n as i64) as usize;
        (i, u - fl)
    }

    /// Value at any lift `x`.
    #[inline]
    pub fn eval(&self, x: &Vec2) -> f64 {
        let n = self.n;
        let (i1, f1) = self.locate(x[0]);
        let (i2, f2) = self.locate(x[1]);
        let b1 = basis(f1);
        let b2 = basis(f2);
        let mut acc = 0.0;
        for (a, wa) in b1.iter().enumerate() {
            let row = ((i1 + n + a - 1) % n) * n;
            let mut inner = 0.0;
            for (b, wb) in b2.iter().enumerate() {
                inner += wb * self.coeffs[row + (i2 + n + b - 1) % n];
            }
            acc += wa * inner;
        }
        acc
    }

    /// Value and gradient at any lift `x`.
    pub fn eval_gradient(&self, x: &Vec2) -> (f64, Vec2) {
        let n = self.n;
        let (i1, f1) = self.locate(x[0]);
        let (i2, f2) = self.locate(x[1]);
        let (b1, d1) = (basis(f1), basis_derivative(f1));
        let (b2, d2) = (basis(f2), basis_derivative(f2));
        let mut v = 0.0;
        let mut g = Vec2::zeros();
        for a in 0..4 {
            let row = ((i1 + n + a - 1) % n) * n;
            for b in 0..4 {
                let c = self.coeffs[row + (i2 + n + b - 1) % n];
                v += b1[a] * b2[b] * c;
                g[0] += d1[a] * b2[b] * c;
                g[1] += b1[a] * d2[b] * c;
            }
        }
        (v, g * n as f64)
    }
}

#[inline]
fn basis(f: f64) -> [f64; 4] {
    let g = 1.0 - f;
    let f2 = f * f;
    let f3 = f2 * f;
    [
        g * g * g / 6.0,
        (3.0 * f3 - 6.0 * f2 + 4.0) / 6.0,
        (-3.0 * f3 + 3.0 * f2 + 3.0 * f + 1.0) / 6.0,
        f3 / 6.0,
    ]
}

#[inline]
fn basis_derivative(f: f64) -> [f64; 4] {
    let g = 1.0 - f;
    [
        -0.5 * g * g,
        1.5 * f * f - 2.0 * f,
        -1.5 * f * f + f + 0.5,
        0.5 * f * f,
    ]
}

/// Periodic inverse of the circulant `(1, 4, 1)/6`.
fn inverse_kernel(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    let r = 3f64.sqrt() - 2.0;
    let rn = r.powi(n as i32);
    (0..n)
        .map(|k| 3f64.sqrt() * (r.powi(k as i32) + r.powi((n - k) as i32)) / (1.0 - rn))
        .collect()
}
