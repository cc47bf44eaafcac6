use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Crossed entity/day membership. Ids are 0-based internally.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterIndex {
    entity: Vec<usize>,
    day: Vec<usize>,
    q1: usize,
    q2: usize,
}

impl ClusterIndex {
    /// Validated constructor: every level in `0..q1` and `0..q2` must occur.
    pub fn new(entity: Vec<usize>, day: Vec<usize>, q1: usize, q2: usize) -> Result<Self> {
        let idx = Self::with_levels(entity, day, q1, q2)?;
        for (name, ids, q) in [("entity", &idx.entity, q1), ("day", &idx.day, q2)] {
            let mut seen = vec![false; q];
            for &v in ids.iter() {
                seen[v] = true;
            }
            if let Some(missing) = seen.iter().position(|s| !s) {
                return Err(Error::InvalidArgument(format!(
                    "{name} level {} never appears",
                    missing + 1
                )));
            }
        }
        Ok(idx)
    }

    /// Constructor that allows unobserved levels (training subsets).
    pub fn with_levels(entity: Vec<usize>, day: Vec<usize>, q1: usize, q2: usize) -> Result<Self> {
        if entity.len() != day.len() {
            return Err(Error::InvalidArgument(
                "entity and day vectors differ in length".into(),
            ));
        }
        if q1 == 0 || q2 == 0 {
            return Err(Error::InvalidArgument("q1 and q2 must be positive".into()));
        }
        if let Some(&v) = entity.iter().find(|&&v| v >= q1) {
            return Err(Error::Index(format!("entity id {} exceeds q1 = {q1}", v + 1)));
        }
        if let Some(&v) = day.iter().find(|&&v| v >= q2) {
            return Err(Error::Index(format!("day id {} exceeds q2 = {q2}", v + 1)));
        }
        Ok(Self {
            entity,
            day,
            q1,
            q2,
        })
    }

    pub fn len(&self) -> usize {
        self.entity.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entity.is_empty()
    }

    pub fn entity(&self) -> &[usize] {
        &self.entity
    }

    pub fn day(&self) -> &[usize] {
        &self.day
    }

    pub fn q1(&self) -> usize {
        self.q1
    }

    pub fn q2(&self) -> usize {
        self.q2
    }

    /// Column of observation `i`'s day effect in the stacked vector (u, s).
    pub fn day_column(&self, i: usize) -> usize {
        self.q1 + self.day[i]
    }

    pub fn subset(&self, rows: &[usize]) -> Self {
        Self {
            entity: rows.iter().map(|&i| self.entity[i]).collect(),
            day: rows.iter().map(|&i| self.day[i]).collect(),
            q1: self.q1,
            q2: self.q2,
        }
    }

    /// One-hot matrix Z (n x (q1 + q2)), two ones per row.
    pub fn design(&self) -> DMatrix<f64> {
        let mut z = DMatrix::zeros(self.len(), self.q1 + self.q2);
        for i in 0..self.len() {
            z[(i, self.entity[i])] = 1.0;
            z[(i, self.day_column(i))] = 1.0;
        }
        z
    }

    /// δ_i = u_{entity(i)} + s_{day(i)}.
    pub fn effects(&self, u: &[f64], s: &[f64]) -> Vec<f64> {
        (0..self.len())
            .map(|i| u[self.entity[i]] + s[self.day[i]])
            .collect()
    }

    /// Cov(δ) = σ_u² [same entity] + σ_s² [same day].
    pub fn covariance(&self, sigma_u_sq: f64, sigma_s_sq: f64) -> DMatrix<f64> {
        let n = self.len();
        DMatrix::from_fn(n, n, |a, b| {
            let mut v = 0.0;
            if self.entity[a] == self.entity[b] {
                v += sigma_u_sq;
            }
            if self.day[a] == self.day[b] {
                v += sigma_s_sq;
            }
            v
        })
    }
}

/// Planar coordinates and region labels (0-based).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialIndex {
    coords: Vec<[f64; 2]>,
    region: Vec<usize>,
    q: usize,
}

impl SpatialIndex {
    pub fn new(coords: Vec<[f64; 2]>, region: Vec<usize>, q: usize) -> Result<Self> {
        let idx = Self::with_levels(coords, region, q)?;
        let mut seen = vec![false; q];
        for &r in &idx.region {
            seen[r] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidArgument(format!(
                "region {} never appears",
                missing + 1
            )));
        }
        Ok(idx)
    }

    pub fn with_levels(coords: Vec<[f64; 2]>, region: Vec<usize>, q: usize) -> Result<Self> {
        if coords.len() != region.len() {
            return Err(Error::InvalidArgument(
                "coordinate and region vectors differ in length".into(),
            ));
        }
        if q == 0 {
            return Err(Error::InvalidArgument("region count must be positive".into()));
        }
        if let Some(&r) = region.iter().find(|&&r| r >= q) {
            return Err(Error::Index(format!("region id {} exceeds q = {q}", r + 1)));
        }
        if coords.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument("non-finite coordinate".into()));
        }
        Ok(Self { coords, region, q })
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    pub fn region(&self) -> &[usize] {
        &self.region
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn subset(&self, rows: &[usize]) -> Self {
        Self {
            coords: rows.iter().map(|&i| self.coords[i]).collect(),
            region: rows.iter().map(|&i| self.region[i]).collect(),
            q: self.q,
        }
    }
}

/// Which correlation structure a dataset carries.
#[derive(Debug, Clone, Copy)]
pub enum Structure<'a> {
    Iid,
    Clustered(&'a ClusterIndex),
    Spatial(&'a SpatialIndex),
}

/// Training set T = (X, Y) with an optional correlation index.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
    clusters: Option<ClusterIndex>,
    spatial: Option<SpatialIndex>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::InvalidArgument(format!(
                "X has {} rows but y has {} entries",
                x.nrows(),
                y.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("X contains non-finite values".into()));
        }
        Ok(Self {
            x,
            y,
            clusters: None,
            spatial: None,
        })
    }

    pub fn with_clusters(mut self, clusters: ClusterIndex) -> Result<Self> {
        if clusters.len() != self.n() {
            return Err(Error::InvalidArgument(format!(
                "cluster index has {} rows, dataset has {}",
                clusters.len(),
                self.n()
            )));
        }
        self.clusters = Some(clusters);
        Ok(self)
    }

    pub fn with_spatial(mut self, spatial: SpatialIndex) -> Result<Self> {
        if spatial.len() != self.n() {
            return Err(Error::InvalidArgument(format!(
                "spatial index has {} rows, dataset has {}",
                spatial.len(),
                self.n()
            )));
        }
        self.spatial = Some(spatial);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn clusters(&self) -> Option<&ClusterIndex> {
        self.clusters.as_ref()
    }

    pub fn spatial(&self) -> Option<&SpatialIndex> {
        self.spatial.as_ref()
    }

    /// The single correlation structure used for bias estimation.
    pub fn structure(&self) -> Result<Structure<'_>> {
        match (&self.clusters, &self.spatial) {
            (None, None) => Ok(Structure::Iid),
            (Some(c), None) => Ok(Structure::Clustered(c)),
            (None, Some(s)) => Ok(Structure::Spatial(s)),
            (Some(_), Some(_)) => Err(Error::InvalidArgument(
                "dataset carries both a cluster and a spatial index".into(),
            )),
        }
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.x.row(i).iter().copied().collect()
    }

    pub fn subset(&self, rows: &[usize]) -> Self {
        Self {
            x: crate::linalg::select_rows(&self.x, rows),
            y: crate::linalg::select_vec(&self.y, rows),
            clusters: self.clusters.as_ref().map(|c| c.subset(rows)),
            spatial: self.spatial.as_ref().map(|s| s.subset(rows)),
        }
    }

    /// Same covariates and indices, new responses.
    pub fn with_response(&self, y: DVector<f64>) -> Result<Self> {
        if y.len() != self.n() {
            return Err(Error::InvalidArgument("response length mismatch".into()));
        }
        Ok(Self {
            x: self.x.clone(),
            y,
            clusters: self.clusters.clone(),
            spatial: self.spatial.clone(),
        })
    }

    /// Same responses and indices, new covariate matrix.
    pub fn with_covariates(&self, x: DMatrix<f64>) -> Result<Self> {
        if x.nrows() != self.n() {
            return Err(Error::InvalidArgument("covariate row count mismatch".into()));
        }
        Ok(Self {
            x,
            y: self.y.clone(),
            clusters: self.clusters.clone(),
            spatial: self.spatial.clone(),
        })
    }

    pub fn select_columns(&self, cols: &[usize]) -> Result<Self> {
        if let Some(&c) = cols.iter().find(|&&c| c >= self.p()) {
            return Err(Error::Index(format!("column {c} out of range")));
        }
        self.with_covariates(crate::linalg::select_cols(&self.x, cols))
    }
}
