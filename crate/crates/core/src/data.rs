use std::collections::BTreeMap;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Column table for one analysis: outcome, binary group, covariates, selection
/// weights and the optional survey design labels.
///
/// Every row is a sampled unit (S = 1). `sel_weight` holds the inverse
/// selection probability of each row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub y: Vec<f64>,
    pub a: Vec<u8>,
    pub x: DMatrix<f64>,
    pub x_names: Vec<String>,
    pub sel_weight: Vec<f64>,
    pub stratum: Option<Vec<String>>,
    pub psu: Option<Vec<String>>,
    pub pop_size: Option<u64>,
}

impl Dataset {
    /// Builds a dataset and checks its invariants.
    pub fn new(
        y: Vec<f64>,
        a: Vec<u8>,
        x: DMatrix<f64>,
        x_names: Vec<String>,
        sel_weight: Vec<f64>,
    ) -> Result<Self> {
        let data = Dataset {
            y,
            a,
            x,
            x_names,
            sel_weight,
            stratum: None,
            psu: None,
            pop_size: None,
        };
        data.validate()?;
        Ok(data)
    }

    /// Convenience constructor with generated covariate names `x1..xp`.
    pub fn from_columns(y: Vec<f64>, a: Vec<u8>, x: DMatrix<f64>, sel_weight: Vec<f64>) -> Result<Self> {
        let names = (1..=x.ncols()).map(|j| format!("x{j}")).collect();
        Self::new(y, a, x, names, sel_weight)
    }

    pub fn with_pop_size(mut self, n_pop: u64) -> Result<Self> {
        if n_pop == 0 {
            return Err(Error::InvalidData("population size must be positive".into()));
        }
        self.pop_size = Some(n_pop);
        Ok(self)
    }

    pub fn with_design(mut self, stratum: Option<Vec<String>>, psu: Option<Vec<String>>) -> Result<Self> {
        self.stratum = stratum;
        self.psu = psu;
        self.validate()?;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Number of rows in group 0 and group 1.
    pub fn group_counts(&self) -> (usize, usize) {
        let n1 = self.a.iter().filter(|&&a| a == 1).count();
        (self.a.len() - n1, n1)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.y.len();
        if self.a.len() != n || self.sel_weight.len() != n || self.x.nrows() != n {
            return Err(Error::Dimension(format!(
                "y has {n} rows, a {}, x {}, sel_weight {}",
                self.a.len(),
                self.x.nrows(),
                self.sel_weight.len()
            )));
        }
        if self.x_names.len() != self.x.ncols() {
            return Err(Error::Dimension(format!(
                "{} covariate names for {} columns",
                self.x_names.len(),
                self.x.ncols()
            )));
        }
        if let Some(i) = self.a.iter().position(|&a| a > 1) {
            return Err(Error::InvalidData(format!("group value {} at row {i} is not 0/1", self.a[i])));
        }
        let (n0, n1) = self.group_counts();
        if n0 < 2 || n1 < 2 {
            return Err(Error::InvalidData(format!(
                "each group needs at least two rows (group 0: {n0}, group 1: {n1})"
            )));
        }
        if let Some(i) = self.sel_weight.iter().position(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::InvalidData(format!(
                "selection weight {} at row {i} is not strictly positive and finite",
                self.sel_weight[i]
            )));
        }
        if let Some(i) = self.y.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!("non-finite outcome at row {i}")));
        }
        if let Some(pos) = self.x.iter().position(|v| !v.is_finite()) {
            let (i, j) = (pos % n, pos / n);
            return Err(Error::InvalidData(format!(
                "non-finite covariate `{}` at row {i}",
                self.x_names[j]
            )));
        }
        for (label, col) in [("stratum", &self.stratum), ("psu", &self.psu)] {
            if let Some(col) = col {
                if col.len() != n {
                    return Err(Error::Dimension(format!("{label} has {} rows, expected {n}", col.len())));
                }
            }
        }
        if self.psu.is_some() && self.stratum.is_none() {
            return Err(Error::InvalidData("PSU labels require stratum labels".into()));
        }
        Ok(())
    }

    /// Sub-matrix of the covariates; `None` selects every column.
    pub fn covariates(&self, cols: Option<&[usize]>) -> DMatrix<f64> {
        match cols {
            None => self.x.clone(),
            Some(cols) => self.x.select_columns(cols),
        }
    }

    pub fn covariate_names(&self, cols: Option<&[usize]>) -> Vec<String> {
        match cols {
            None => self.x_names.clone(),
            Some(cols) => cols.iter().map(|&j| self.x_names[j].clone()).collect(),
        }
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.x_names.iter().position(|n| n == name)
    }

    /// Copy with the group labels exchanged.
    pub fn swap_groups(&self) -> Dataset {
        let mut out = self.clone();
        for a in &mut out.a {
            *a = 1 - *a;
        }
        out
    }

    /// Row subset in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        let pick_str = |col: &Option<Vec<String>>| col.as_ref().map(|c| rows.iter().map(|&i| c[i].clone()).collect());
        Dataset {
            y: rows.iter().map(|&i| self.y[i]).collect(),
            a: rows.iter().map(|&i| self.a[i]).collect(),
            x: self.x.select_rows(rows),
            x_names: self.x_names.clone(),
            sel_weight: rows.iter().map(|&i| self.sel_weight[i]).collect(),
            stratum: pick_str(&self.stratum),
            psu: pick_str(&self.psu),
            pop_size: self.pop_size,
        }
    }

    /// Row counts per (stratum, PSU) pair, keyed in sorted order.
    pub fn design_cells(&self) -> Option<BTreeMap<(String, String), usize>> {
        let strata = self.stratum.as_ref()?;
        let mut cells = BTreeMap::new();
        for i in 0..self.n() {
            let psu = self.psu.as_ref().map_or_else(|| i.to_string(), |p| p[i].clone());
            *cells.entry((strata[i].clone(), psu)).or_insert(0) += 1;
        }
        Some(cells)
    }
}
