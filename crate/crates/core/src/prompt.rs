//! The engineered prompt and its column layout.
//!
//! Columns are documented 1-based (`2d+7` is the `u` column) and stored
//! 0-based, so documented column `c` lives at index `c - 1`:
//!
//! | 1-based | content (rows `1..n`) | auxiliary row `n+1` |
//! |---------|-----------------------|---------------------|
//! | `1..d` | `x_i` | 0 |
//! | `d+1..2d` | `y_i` | 0 |
//! | `2d+1` | `‖x_i‖²` | 0 |
//! | `2d+2` | `‖y_i‖²` | 0 |
//! | `2d+3..2d+5` | 1 | 0 |
//! | `2d+6` | 1 | `−1/n` |
//! | `2d+7` | `u_i` | don't-care |
//! | `2d+8` | `v_i` | don't-care |
//! | `2d+9` | 0 | 0 |

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::problem::ProblemInstance;

/// 0-based column indices for a given point dimension `d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub d: usize,
}

impl Layout {
    pub const fn new(d: usize) -> Self {
        Self { d }
    }

    /// Hidden width `2d + 9`.
    pub const fn width(&self) -> usize {
        2 * self.d + 9
    }

    pub const fn x(&self, k: usize) -> usize {
        k
    }

    pub const fn y(&self, k: usize) -> usize {
        self.d + k
    }

    pub const fn x_norm(&self) -> usize {
        2 * self.d
    }

    pub const fn y_norm(&self) -> usize {
        2 * self.d + 1
    }

    /// The four constant columns `2d+3..2d+6` (1-based); `k ∈ 0..4`.
    pub const fn one(&self, k: usize) -> usize {
        2 * self.d + 2 + k
    }

    /// Column `2d+6`: 1 on point rows, `−1/n` on the auxiliary row.
    pub const fn marker(&self) -> usize {
        self.one(3)
    }

    pub const fn u(&self) -> usize {
        2 * self.d + 6
    }

    pub const fn v(&self) -> usize {
        2 * self.d + 7
    }

    pub const fn spare(&self) -> usize {
        2 * self.d + 8
    }

    /// Every column except the two dual scratch columns.
    pub fn static_columns(&self) -> impl Iterator<Item = usize> {
        let (u, v) = (self.u(), self.v());
        (0..self.width()).filter(move |&c| c != u && c != v)
    }
}

/// `(n+1) × (2d+9)` hidden representation; row `n` (0-based) is auxiliary.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenState {
    z: Matrix,
    n: usize,
    d: usize,
}

impl HiddenState {
    pub fn from_matrix(z: Matrix, n: usize, d: usize) -> Result<Self> {
        let layout = Layout::new(d);
        if z.shape() != (n + 1, layout.width()) {
            return Err(Error::Shape {
                expected: (n + 1, layout.width()),
                got: z.shape(),
            });
        }
        Ok(Self { z, n, d })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self.d)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.z
    }

    pub fn into_matrix(self) -> Matrix {
        self.z
    }

    /// Overwrites the dual columns of the point rows.
    pub fn with_dual(mut self, u: &[f64], v: &[f64]) -> Result<Self> {
        if u.len() != self.n || v.len() != self.n {
            return Err(Error::Shape {
                expected: (self.n, 2),
                got: (u.len(), v.len()),
            });
        }
        let l = self.layout();
        for i in 0..self.n {
            self.z[(i, l.u())] = u[i];
            self.z[(i, l.v())] = v[i];
        }
        Ok(self)
    }
}

pub fn build_prompt(inst: &ProblemInstance) -> HiddenState {
    let (n, d) = (inst.n(), inst.d());
    let l = Layout::new(d);
    let mut z = Matrix::zeros(n + 1, l.width());
    for i in 0..n {
        let (xi, yi) = (inst.x().row(i), inst.y().row(i));
        for k in 0..d {
            z[(i, l.x(k))] = xi[k];
            z[(i, l.y(k))] = yi[k];
        }
        z[(i, l.x_norm())] = xi.iter().map(|a| a * a).sum();
        z[(i, l.y_norm())] = yi.iter().map(|a| a * a).sum();
        for k in 0..4 {
            z[(i, l.one(k))] = 1.0;
        }
    }
    z[(n, l.marker())] = -1.0 / n as f64;
    HiddenState { z, n, d }
}

/// Reads `(u, v)` from columns `2d+7`, `2d+8` of the point rows.
pub fn read_dual(state: &HiddenState) -> (Vec<f64>, Vec<f64>) {
    let l = state.layout();
    let u = (0..state.n).map(|i| state.z[(i, l.u())]).collect();
    let v = (0..state.n).map(|i| state.z[(i, l.v())]).collect();
    (u, v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::grid_instance;
    use alloc::vec;

    #[test]
    fn single_point_prompt() {
        let inst = ProblemInstance::from_lists(&[0.5], &[0.25], 1.0).unwrap();
        let z = build_prompt(&inst);
        let expected = Matrix::from_rows(&[
            [0.5, 0.25, 0.25, 0.0625, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0],
        ])
        .unwrap();
        assert_eq!(z.matrix(), &expected);
    }

    #[test]
    fn auxiliary_row_template_and_constant_columns() {
        let inst = grid_instance(4, 3).unwrap();
        let z = build_prompt(&inst);
        let l = z.layout();
        for c in 0..l.width() {
            let want = if c == l.marker() { -0.25 } else { 0.0 };
            assert_eq!(z.matrix()[(4, c)], want);
        }
        for i in 0..4 {
            for k in 0..4 {
                assert_eq!(z.matrix()[(i, l.one(k))], 1.0);
            }
        }
    }

    #[test]
    fn layer_zero_duals_are_zero() {
        let z = build_prompt(&grid_instance(6, 1).unwrap());
        let (u, v) = read_dual(&z);
        assert!(u.iter().chain(&v).all(|&a| a == 0.0));
        assert_eq!(u.len(), 6);
    }

    #[test]
    fn two_dimensional_layout() {
        let x = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let y = Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap();
        let z = build_prompt(&ProblemInstance::new(x, y, 1.0).unwrap());
        assert_eq!(z.matrix().shape(), (3, 13));
        assert_eq!(&z.matrix().row(1)[..6], &[3.0, 4.0, 1.0, 0.0, 25.0, 1.0]);
    }

    #[test]
    fn with_dual_roundtrip() {
        let z = build_prompt(&grid_instance(3, 0).unwrap())
            .with_dual(&[1.0, 2.0, 3.0], &[-1.0, 0.0, 1.0])
            .unwrap();
        assert_eq!(read_dual(&z), (vec![1.0, 2.0, 3.0], vec![-1.0, 0.0, 1.0]));
    }
}
