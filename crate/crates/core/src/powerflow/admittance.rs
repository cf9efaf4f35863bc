use num_complex::Complex64;

use crate::grid::{BusId, GridCase};

/// Sparse complex bus admittance matrix, one sorted row of `(column, value)`
/// pairs per bus in case order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceMatrix {
    rows: Vec<Vec<(usize, Complex64)>>,
    /// Buses with no incident admittance at all. The network equations are
    /// singular at these buses.
    pub floating_buses: Vec<BusId>,
}

impl AdmittanceMatrix {
    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, i: usize) -> &[(usize, Complex64)] {
        &self.rows[i]
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.rows[i]
            .binary_search_by_key(&j, |e| e.0)
            .map(|k| self.rows[i][k].1)
            .unwrap_or_default()
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn mul_vec(&self, v: &[Complex64]) -> Vec<Complex64> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(j, y)| y * v[j]).sum())
            .collect()
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..self.dim()).all(|i| {
            self.rows[i]
                .iter()
                .all(|&(j, y)| (y - self.get(j, i)).norm() <= tol)
        })
    }

    pub fn to_dense(&self) -> Vec<Vec<Complex64>> {
        let n = self.dim();
        let mut out = vec![vec![Complex64::default(); n]; n];
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, y) in row {
                out[i][j] = y;
            }
        }
        out
    }
}

/// Stamps every in-service branch with the two-port π-model and adds bus
/// shunts.
///
/// With series admittance `y`, total charging `b` and complex ratio
/// `a = tap·e^{j·shift}` on the from side:
/// `Yff = (y + jb/2)/|a|²`, `Ytt = y + jb/2`, `Yft = −y/conj(a)`, `Ytf = −y/a`.
pub fn build_admittance(case: &GridCase) -> AdmittanceMatrix {
    let n = case.buses.len();
    let index: std::collections::HashMap<BusId, usize> = case
        .buses
        .iter()
        .enumerate()
        .map(|(i, b)| (b.id, i))
        .collect();
    let mut dense: Vec<std::collections::BTreeMap<usize, Complex64>> = vec![Default::default(); n];
    let mut touched = vec![false; n];

    for (i, b) in case.buses.iter().enumerate() {
        if b.gs != 0.0 || b.bs != 0.0 {
            *dense[i].entry(i).or_default() += Complex64::new(b.gs, b.bs);
            touched[i] = true;
        }
    }

    for br in case.branches.iter().filter(|b| b.in_service) {
        let (Some(&f), Some(&t)) = (index.get(&br.from_bus), index.get(&br.to_bus)) else {
            continue;
        };
        let y = Complex64::new(1.0, 0.0) / Complex64::new(br.r, br.x);
        let charging = Complex64::new(0.0, br.b_shunt / 2.0);
        let a = Complex64::from_polar(br.tap, br.phase_shift);
        let ytt = y + charging;
        let yff = ytt / (br.tap * br.tap);
        let yft = -y / a.conj();
        let ytf = -y / a;
        *dense[f].entry(f).or_default() += yff;
        *dense[t].entry(t).or_default() += ytt;
        *dense[f].entry(t).or_default() += yft;
        *dense[t].entry(f).or_default() += ytf;
        touched[f] = true;
        touched[t] = true;
    }

    let floating_buses = case
        .buses
        .iter()
        .zip(&touched)
        .filter(|(_, &t)| !t)
        .map(|(b, _)| b.id)
        .collect();
    AdmittanceMatrix {
        rows: dense.into_iter().map(|m| m.into_iter().collect()).collect(),
        floating_buses,
    }
}
