//! Joint densities on the counting lattice and their text format.
//!
//! ```text
//! # hme-grid v1 tau=<tau> total_mass=<mass>
//! d,c,p
//! 0,0,1.0000000000000000e0
//! ```
//!
//! Rows are in lexicographic `(d, c)` order. Networks with other than one
//! slow and one fast counter append `dims=<L>x<q>` to the header and write
//! `L + q` integer columns before `p`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct LatticePoint {
    pub d: Vec<i64>,
    pub c: Vec<i64>,
}

impl LatticePoint {
    pub fn new(d: Vec<i64>, c: Vec<i64>) -> Self {
        LatticePoint { d, c }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointDensityGrid {
    pub time: f64,
    slow_dims: usize,
    fast_dims: usize,
    mass: BTreeMap<LatticePoint, f64>,
}

impl JointDensityGrid {
    pub fn new(time: f64, slow_dims: usize, fast_dims: usize) -> Self {
        JointDensityGrid {
            time,
            slow_dims,
            fast_dims,
            mass: BTreeMap::new(),
        }
    }

    pub fn slow_dims(&self) -> usize {
        self.slow_dims
    }

    pub fn fast_dims(&self) -> usize {
        self.fast_dims
    }

    /// Adds `p` to the mass at `point`.
    pub fn add(&mut self, point: LatticePoint, p: f64) {
        debug_assert_eq!(point.d.len(), self.slow_dims);
        debug_assert_eq!(point.c.len(), self.fast_dims);
        *self.mass.entry(point).or_insert(0.0) += p;
    }

    pub fn insert(&mut self, point: LatticePoint, p: f64) {
        self.mass.insert(point, p);
    }

    pub fn get(&self, point: &LatticePoint) -> f64 {
        self.mass.get(point).copied().unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&LatticePoint, f64)> {
        self.mass.iter().map(|(k, &v)| (k, v))
    }

    pub fn total_mass(&self) -> f64 {
        self.mass.values().sum()
    }

    /// Cell with the largest mass; ties resolve to the lexicographically first.
    pub fn mode(&self) -> Option<&LatticePoint> {
        let mut best: Option<(&LatticePoint, f64)> = None;
        for (k, &v) in &self.mass {
            if best.is_none_or(|(_, bv)| v > bv) {
                best = Some((k, v));
            }
        }
        best.map(|(k, _)| k)
    }

    /// Mass summed over the fast coordinates.
    pub fn slow_marginals(&self) -> BTreeMap<Vec<i64>, f64> {
        let mut out = BTreeMap::new();
        for (k, &v) in &self.mass {
            *out.entry(k.d.clone()).or_insert(0.0) += v;
        }
        out
    }

    /// Conditional means and variances of each fast coordinate given `d`.
    pub fn conditional_moments(&self) -> BTreeMap<Vec<i64>, (Vec<f64>, Vec<f64>)> {
        let mut sums: BTreeMap<Vec<i64>, (f64, Vec<f64>, Vec<f64>)> = BTreeMap::new();
        for (k, &v) in &self.mass {
            let e = sums
                .entry(k.d.clone())
                .or_insert_with(|| (0.0, vec![0.0; self.fast_dims], vec![0.0; self.fast_dims]));
            e.0 += v;
            for (j, &c) in k.c.iter().enumerate() {
                e.1[j] += v * c as f64;
                e.2[j] += v * (c as f64) * (c as f64);
            }
        }
        sums.into_iter()
            .filter(|(_, (w, _, _))| *w > 0.0)
            .map(|(d, (w, s1, s2))| {
                let mean: Vec<f64> = s1.iter().map(|s| s / w).collect();
                let var = s2
                    .iter()
                    .zip(&mean)
                    .map(|(s, m)| (s / w - m * m).max(0.0))
                    .collect();
                (d, (mean, var))
            })
            .collect()
    }

    fn is_scalar_pair(&self) -> bool {
        self.slow_dims == 1 && self.fast_dims == 1
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        write!(
            s,
            "# hme-grid v1 tau={} total_mass={:.16e}",
            self.time,
            self.total_mass()
        )
        .unwrap();
        if !self.is_scalar_pair() {
            write!(s, " dims={}x{}", self.slow_dims, self.fast_dims).unwrap();
        }
        s.push('\n');
        let names: Vec<String> = if self.is_scalar_pair() {
            vec!["d".into(), "c".into()]
        } else {
            (0..self.slow_dims)
                .map(|i| format!("d{i}"))
                .chain((0..self.fast_dims).map(|j| format!("c{j}")))
                .collect()
        };
        s.push_str(&names.join(","));
        s.push_str(",p\n");
        for (k, &v) in &self.mass {
            for x in k.d.iter().chain(&k.c) {
                write!(s, "{x},").unwrap();
            }
            writeln!(s, "{v:.16e}").unwrap();
        }
        s
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let fail = |line: usize, message: &str| Error::GridFormat {
            path: origin.to_path_buf(),
            message: format!("line {line}: {message}"),
        };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| fail(1, "empty file"))?;
        let rest = header
            .strip_prefix("# hme-grid v1 ")
            .ok_or_else(|| fail(1, "missing '# hme-grid v1' header"))?;
        let mut time = None;
        let (mut slow_dims, mut fast_dims) = (1usize, 1usize);
        for token in rest.split_whitespace() {
            let (key, value) = token
                .split_once('=')
                .ok_or_else(|| fail(1, "malformed header field"))?;
            match key {
                "tau" => time = Some(value.parse::<f64>().map_err(|_| fail(1, "bad tau"))?),
                "total_mass" => {
                    value.parse::<f64>().map_err(|_| fail(1, "bad total_mass"))?;
                }
                "dims" => {
                    let (a, b) = value.split_once('x').ok_or_else(|| fail(1, "bad dims"))?;
                    slow_dims = a.parse().map_err(|_| fail(1, "bad dims"))?;
                    fast_dims = b.parse().map_err(|_| fail(1, "bad dims"))?;
                }
                _ => return Err(fail(1, &format!("unknown header field '{key}'"))),
            }
        }
        let time = time.ok_or_else(|| fail(1, "missing tau"))?;
        lines.next().ok_or_else(|| fail(2, "missing column header"))?;
        let mut grid = JointDensityGrid::new(time, slow_dims, fast_dims);
        let width = slow_dims + fast_dims + 1;
        for (n, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != width {
                return Err(fail(n + 1, &format!("expected {width} columns")));
            }
            let ints: Vec<i64> = fields[..width - 1]
                .iter()
                .map(|f| f.trim().parse::<i64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| fail(n + 1, "bad lattice coordinate"))?;
            let p: f64 = fields[width - 1]
                .trim()
                .parse()
                .map_err(|_| fail(n + 1, "bad probability"))?;
            if !(p >= 0.0) {
                return Err(fail(n + 1, "negative probability"));
            }
            grid.insert(
                LatticePoint::new(ints[..slow_dims].to_vec(), ints[slow_dims..].to_vec()),
                p,
            );
        }
        Ok(grid)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }
}
