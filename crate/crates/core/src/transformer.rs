//! Two-head softmax attention with residual and ReLU feedforward stages,
//! and the constructed weights under which each layer performs one
//! adaptive-stepsize dual gradient step.
//!
//! A layer maps `Z` to
//!
//! ```text
//! Z½ = Z + Σ_{j=1,2} softmax_rows(Z Q_j Zᵀ) (Z Wv_j) B_j
//! Z' = Z½ + relu(Z½ Wf)
//! ```
//!
//! where the softmax runs over all `n+1` tokens, auxiliary token included.
//!
//! The constructed weights are pinned down by two identities rather than by
//! a literal matrix listing:
//!
//! * logits: head 1 gives `(−C_ij + u_i + v_j)/λ − 1` on point pairs and `0`
//!   whenever the auxiliary token is involved; head 2 gives the transpose;
//! * values: `Z Wv_1` is zero except column `2d+7`, which is `−Z[:, 2d+6]`
//!   (head 2 writes column `2d+8` the same way).
//!
//! Row `i` of head 1 then outputs `−(Σ_j M_ij − 1/n)/(Σ_j M_ij + 1)` in the
//! `u` column, which `B_1 = γI` turns into `−D_ii ∇_{u_i} L`.
//!
//! The auxiliary token must stay at its prompt template for the logit
//! identity to keep holding: its `u`/`v` entries enter the point rows'
//! logits against that token, and no fixed weight choice can cancel them.
//! [`AuxUpdate::KeyValueOnly`] therefore withholds the residual update from
//! the auxiliary row; [`AuxUpdate::Residual`] applies the recurrence to
//! every row and drifts away from gradient descent after the first layer.

use alloc::vec::Vec;

use crate::dual::StepsizeSchedule;
use crate::error::{Error, Result};
use crate::math::exp;
use crate::matrix::Matrix;
use crate::problem::ProblemInstance;
use crate::prompt::{build_prompt, HiddenState, Layout};

/// Bilinear logit form `Q = w_k w_qᵀ` and value map `Wv`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AttentionHead {
    pub q: Matrix,
    pub wv: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LayerWeights {
    pub heads: [AttentionHead; 2],
    pub mix: [Matrix; 2],
    pub wf: Matrix,
}

impl LayerWeights {
    pub fn width(&self) -> usize {
        self.wf.rows()
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.width();
        let mats = [
            &self.heads[0].q,
            &self.heads[0].wv,
            &self.heads[1].q,
            &self.heads[1].wv,
            &self.mix[0],
            &self.mix[1],
            &self.wf,
        ];
        for m in mats {
            if m.shape() != (w, w) {
                return Err(Error::Shape {
                    expected: (w, w),
                    got: m.shape(),
                });
            }
            if !m.is_finite() {
                return Err(Error::InvalidParameter {
                    name: "weights",
                    value: f64::NAN,
                });
            }
        }
        Ok(())
    }

    /// Same weights with both value maps negated. Used to check that the
    /// verification suite catches a broken construction.
    pub fn with_value_sign_flipped(&self) -> Self {
        let mut out = self.clone();
        for h in &mut out.heads {
            h.wv = h.wv.scale(-1.0);
        }
        out
    }
}

/// How the auxiliary token's row is treated by the residual update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AuxUpdate {
    /// The auxiliary token is attended to but its own row is left at the
    /// prompt template.
    #[default]
    KeyValueOnly,
    /// Every row, auxiliary included, receives the residual update.
    Residual,
}

/// Softmax pattern over all `n+1` tokens and the `n × n` raw kernel block.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadPattern {
    pub softmax: Matrix,
    pub raw_kernel: Matrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatternVariant {
    Softmax,
    RawKernel,
}

/// States `Z^(0..=depth)` and, for each state, both heads' patterns.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub states: Vec<HiddenState>,
    pub patterns: Vec<[HeadPattern; 2]>,
}

impl ForwardTrace {
    pub fn depth(&self) -> usize {
        self.states.len() - 1
    }

    pub fn final_state(&self) -> &HiddenState {
        self.states.last().expect("trace holds at least the prompt")
    }

    /// Head-1 raw kernel at state `layer`, i.e. `M` at that layer's iterate.
    pub fn kernel(&self, layer: usize) -> &Matrix {
        &self.patterns[layer][0].raw_kernel
    }
}

/// Checks the logit and value identities on a fixed probe prompt with
/// nonzero duals.
fn self_check(w: &LayerWeights, d: usize, lambda: f64) -> Result<()> {
    let n = 2;
    let x = Matrix::from_fn(n, d, |i, k| 0.3 + 0.2 * i as f64 - 0.1 * k as f64);
    let y = Matrix::from_fn(n, d, |i, k| 0.7 - 0.25 * i as f64 + 0.05 * k as f64);
    let inst = ProblemInstance::new(x, y, lambda)?;
    let c = crate::problem::cost_matrix(&inst);
    let (u, v) = ([0.11, -0.07], [-0.02, 0.05]);
    let z = build_prompt(&inst).with_dual(&u, &v)?;
    let l = Layout::new(d);
    let tol = |want: f64| 1e-9 * (1.0 + want.abs());
    for (h, head) in w.heads.iter().enumerate() {
        let lg = logits(z.matrix(), head)?;
        for i in 0..=n {
            for j in 0..=n {
                let want = if i == n || j == n {
                    0.0
                } else if h == 0 {
                    (-c.get(i, j) + u[i] + v[j]) / lambda - 1.0
                } else {
                    (-c.get(j, i) + u[j] + v[i]) / lambda - 1.0
                };
                if (lg[(i, j)] - want).abs() > tol(want) {
                    return Err(Error::InvalidParameter {
                        name: "logit identity",
                        value: lg[(i, j)] - want,
                    });
                }
            }
        }
        let vals = z.matrix().matmul(&head.wv)?;
        let target = if h == 0 { l.u() } else { l.v() };
        for i in 0..=n {
            for col in 0..l.width() {
                let want = if col == target {
                    -z.matrix()[(i, l.marker())]
                } else {
                    0.0
                };
                if vals[(i, col)] != want {
                    return Err(Error::InvalidParameter {
                        name: "value identity",
                        value: vals[(i, col)] - want,
                    });
                }
            }
        }
    }
    Ok(())
}

/// Weights under which one layer is one adaptive dual GD step with stepsize
/// scale `γ`. The same weights serve every `n`.
pub fn build_constructed_weights(d: usize, lambda: f64, gamma: f64) -> Result<LayerWeights> {
    if d == 0 {
        return Err(Error::InvalidInstance("need d >= 1"));
    }
    for (name, value) in [("lambda", lambda), ("gamma", gamma)] {
        if !(value > 0.0 && value.is_finite()) {
            return Err(Error::InvalidParameter { name, value });
        }
    }
    let l = Layout::new(d);
    let w = l.width();
    let inv = 1.0 / lambda;
    let mut q = Matrix::zeros(w, w);
    for k in 0..d {
        q[(l.x(k), l.y(k))] = 2.0 * inv;
    }
    q[(l.x_norm(), l.one(0))] = -inv;
    q[(l.one(0), l.y_norm())] = -inv;
    q[(l.u(), l.one(1))] = inv;
    q[(l.one(1), l.v())] = inv;
    q[(l.one(2), l.one(2))] = -1.0;

    let mut wv1 = Matrix::zeros(w, w);
    wv1[(l.marker(), l.u())] = -1.0;
    let mut wv2 = Matrix::zeros(w, w);
    wv2[(l.marker(), l.v())] = -1.0;

    let mix = Matrix::identity(w).scale(gamma);
    let weights = LayerWeights {
        heads: [
            AttentionHead { q: q.clone(), wv: wv1 },
            AttentionHead {
                q: q.transpose(),
                wv: wv2,
            },
        ],
        mix: [mix.clone(), mix],
        wf: Matrix::zeros(w, w),
    };
    weights.validate()?;
    self_check(&weights, d, lambda)?;
    Ok(weights)
}

/// `Z Q Zᵀ`.
pub fn logits(z: &Matrix, head: &AttentionHead) -> Result<Matrix> {
    z.matmul(&head.q)?.matmul(&z.transpose())
}

/// Row softmax with per-row max subtraction.
pub fn softmax_rows(a: &Matrix) -> Matrix {
    let mut out = a.clone();
    for i in 0..a.rows() {
        let row = out.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for x in row.iter_mut() {
            *x = exp(*x - max);
            s += *x;
        }
        for x in row.iter_mut() {
            *x /= s;
        }
    }
    out
}

/// `softmax_rows(Z Q Zᵀ) · (Z Wv)`.
pub fn attention(state: &HiddenState, head: &AttentionHead) -> Result<Matrix> {
    let z = state.matrix();
    softmax_rows(&logits(z, head)?).matmul(&z.matmul(&head.wv)?)
}

pub fn layer_forward(state: &HiddenState, w: &LayerWeights, aux: AuxUpdate) -> Result<HiddenState> {
    let z = state.matrix();
    if w.width() != z.cols() {
        return Err(Error::Shape {
            expected: (z.rows(), w.width()),
            got: z.shape(),
        });
    }
    let mut half = z.clone();
    for (head, mix) in w.heads.iter().zip(&w.mix) {
        half = half.add(&attention(state, head)?.matmul(mix)?)?;
    }
    let ff = half.matmul(&w.wf)?.map(|a| a.max(0.0));
    let mut out = half.add(&ff)?;
    if aux == AuxUpdate::KeyValueOnly {
        let n = state.n();
        out.row_mut(n).copy_from_slice(z.row(n));
    }
    HiddenState::from_matrix(out, state.n(), state.d())
}

pub fn attention_pattern(state: &HiddenState, head: &AttentionHead, variant: PatternVariant) -> Result<Matrix> {
    let n = state.n();
    let lg = logits(state.matrix(), head)?;
    Ok(match variant {
        PatternVariant::Softmax => {
            let s = softmax_rows(&lg);
            Matrix::from_fn(n, n, |i, j| s[(i, j)])
        }
        PatternVariant::RawKernel => Matrix::from_fn(n, n, |i, j| exp(lg[(i, j)])),
    })
}

fn head_pattern(state: &HiddenState, head: &AttentionHead) -> Result<HeadPattern> {
    let n = state.n();
    let lg = logits(state.matrix(), head)?;
    Ok(HeadPattern {
        softmax: softmax_rows(&lg),
        raw_kernel: Matrix::from_fn(n, n, |i, j| exp(lg[(i, j)])),
    })
}

/// A stack of layers. A single layer is reused at every depth.
#[derive(Debug, Clone, PartialEq)]
pub struct Transformer {
    layers: Vec<LayerWeights>,
}

impl Transformer {
    pub fn new(layers: Vec<LayerWeights>) -> Result<Self> {
        let Some(first) = layers.first() else {
            return Err(Error::InvalidParameter {
                name: "layers",
                value: 0.0,
            });
        };
        let w = first.width();
        for l in &layers {
            l.validate()?;
            if l.width() != w {
                return Err(Error::Shape {
                    expected: (w, w),
                    got: (l.width(), l.width()),
                });
            }
        }
        Ok(Self { layers })
    }

    /// Weight-tied constructed model with fixed `γ`.
    pub fn constructed(d: usize, lambda: f64, gamma: f64) -> Result<Self> {
        Self::new(alloc::vec![build_constructed_weights(d, lambda, gamma)?])
    }

    pub fn layers(&self) -> &[LayerWeights] {
        &self.layers
    }

    pub fn width(&self) -> usize {
        self.layers[0].width()
    }

    /// Weights applied to state `ℓ` (producing state `ℓ+1`).
    pub fn layer(&self, l: usize) -> &LayerWeights {
        &self.layers[l.min(self.layers.len() - 1)]
    }

    /// Applies `depth` layers, recording every state and both heads'
    /// patterns at every state (the final state's patterns use the last
    /// layer's heads).
    pub fn run(&self, prompt: HiddenState, depth: usize, aux: AuxUpdate) -> Result<ForwardTrace> {
        if self.layers.len() > 1 && depth > self.layers.len() {
            return Err(Error::InvalidParameter {
                name: "depth",
                value: depth as f64,
            });
        }
        let mut states = Vec::with_capacity(depth + 1);
        let mut patterns = Vec::with_capacity(depth + 1);
        let mut cur = prompt;
        for l in 0..=depth {
            let w = self.layer(l.min(depth.saturating_sub(1)));
            patterns.push([head_pattern(&cur, &w.heads[0])?, head_pattern(&cur, &w.heads[1])?]);
            let next = if l < depth {
                Some(layer_forward(&cur, self.layer(l), aux)?)
            } else {
                None
            };
            states.push(cur);
            match next {
                Some(s) => cur = s,
                None => break,
            }
        }
        Ok(ForwardTrace { states, patterns })
    }
}

/// Constructed forward pass: `depth` layers with `γ` from the schedule.
pub fn forward(inst: &ProblemInstance, depth: usize, schedule: StepsizeSchedule) -> Result<ForwardTrace> {
    schedule.validate()?;
    let gamma = schedule.gamma(inst.n(), inst.lambda());
    Transformer::constructed(inst.d(), inst.lambda(), gamma)?.run(build_prompt(inst), depth, AuxUpdate::KeyValueOnly)
}

/// Row-normalized averaging `out_i = Σ_j P_ij x_j / Σ_j P_ij`; for a plan
/// with marginals `1/n` this is `n · P · x`.
pub fn apply_plan(pattern: &Matrix, x: &[f64]) -> Result<Vec<f64>> {
    if pattern.cols() != x.len() {
        return Err(Error::Shape {
            expected: (pattern.rows(), x.len()),
            got: pattern.shape(),
        });
    }
    if let Some(bad) = pattern.as_slice().iter().find(|a| !(**a >= 0.0)) {
        return Err(Error::InvalidParameter {
            name: "pattern entry",
            value: *bad,
        });
    }
    (0..pattern.rows())
        .map(|i| {
            let row = pattern.row(i);
            let s: f64 = row.iter().sum();
            if s <= 0.0 {
                return Err(Error::DegeneratePlan(i));
            }
            Ok(row.iter().zip(x).map(|(p, xv)| p * xv).sum::<f64>() / s)
        })
        .collect()
}

/// Sorted estimate of the source points: each target slot `j` averages the
/// `x_i` routed to it, read from head 2's raw kernel (`Mᵀ`, rows indexed
/// by target) at the final layer.
pub fn sort_readout(trace: &ForwardTrace, x: &[f64]) -> Result<Vec<f64>> {
    let last = trace.patterns.last().expect("trace holds the prompt");
    apply_plan(&last[1].raw_kernel, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dual::{adaptive_stepsizes, gd_step, kernel, DualIterate};
    use crate::problem::{cost_matrix, grid_instance};
    use crate::prompt::read_dual;
    use alloc::vec;

    #[test]
    fn probe_logits_single_point() {
        let lambda = 0.5;
        let inst = ProblemInstance::from_lists(&[0.2], &[0.9], lambda).unwrap();
        let w = build_constructed_weights(1, lambda, 0.1).unwrap();
        let lg = logits(build_prompt(&inst).matrix(), &w.heads[0]).unwrap();
        let c = 0.7f64 * 0.7;
        assert!((lg[(0, 0)] - (-c / lambda - 1.0)).abs() < 1e-12);
        assert_eq!([lg[(0, 1)], lg[(1, 0)], lg[(1, 1)]], [0.0, 0.0, 0.0]);
    }

    #[test]
    fn exp_logits_block_structure() {
        let inst = grid_instance(4, 1).unwrap().with_lambda(0.3).unwrap();
        let z = build_prompt(&inst)
            .with_dual(&[0.1, -0.2, 0.0, 0.05], &[0.0, 0.1, -0.1, 0.2])
            .unwrap();
        let w = build_constructed_weights(1, 0.3, 0.01).unwrap();
        let e = logits(z.matrix(), &w.heads[0]).unwrap().map(exp);
        let (u, v) = read_dual(&z);
        let m = kernel(&cost_matrix(&inst), &DualIterate::new(u, v), 0.3)
            .unwrap()
            .matrix();
        for i in 0..5 {
            for j in 0..5 {
                let want = if i < 4 && j < 4 { m[(i, j)] } else { 1.0 };
                assert!((e[(i, j)] - want).abs() < 1e-12 * want.max(1.0));
            }
        }
    }

    #[test]
    fn zero_q_gives_uniform_attention() {
        let inst = grid_instance(3, 0).unwrap();
        let z = build_prompt(&inst);
        let w = z.layout().width();
        let head = AttentionHead {
            q: Matrix::zeros(w, w),
            wv: Matrix::identity(w),
        };
        let out = attention(&z, &head).unwrap();
        let mean = z.matrix().col_sums();
        for i in 0..4 {
            for c in 0..w {
                assert!((out[(i, c)] - mean[c] / 4.0).abs() < 1e-15);
            }
        }
        let zero_v = AttentionHead {
            q: Matrix::identity(w),
            wv: Matrix::zeros(w, w),
        };
        assert!(attention(&z, &zero_v).unwrap().as_slice().iter().all(|&a| a == 0.0));
    }

    #[test]
    fn head_one_closed_form_on_prompt() {
        let inst = grid_instance(4, 6).unwrap().with_lambda(0.2).unwrap();
        let z = build_prompt(&inst);
        let w = build_constructed_weights(1, 0.2, 1.0).unwrap();
        let out = attention(&z, &w.heads[0]).unwrap();
        let k = kernel(&cost_matrix(&inst), &DualIterate::zero(4), 0.2).unwrap();
        let (dsteps, _) = adaptive_stepsizes(&k, 1.0);
        let rs = k.row_sums();
        for i in 0..4 {
            let want = -(rs[i] - 0.25) / (rs[i] + 1.0);
            assert!((out[(i, z.layout().u())] - want).abs() < 1e-14);
            assert!((out[(i, z.layout().u())] + dsteps[i] * (rs[i] - 0.25)).abs() < 1e-14);
        }
    }

    #[test]
    fn identity_layer_when_mix_and_ff_vanish() {
        let inst = grid_instance(3, 2).unwrap();
        let z = build_prompt(&inst);
        let mut w = build_constructed_weights(1, 0.005, 0.01).unwrap();
        w.mix = [Matrix::zeros(11, 11), Matrix::zeros(11, 11)];
        for aux in [AuxUpdate::KeyValueOnly, AuxUpdate::Residual] {
            assert_eq!(layer_forward(&z, &w, aux).unwrap(), z);
        }
    }

    #[test]
    fn one_layer_is_one_gd_step() {
        let inst = grid_instance(5, 4).unwrap().with_lambda(0.1).unwrap();
        let trace = forward(&inst, 1, StepsizeSchedule::Fixed { gamma: 0.05 }).unwrap();
        let want = gd_step(&DualIterate::zero(5), &cost_matrix(&inst), 0.1, 0.05).unwrap();
        let (u, v) = read_dual(&trace.states[1]);
        assert!(crate::math::max_abs_diff(&u, &want.u) < 1e-12);
        assert!(crate::math::max_abs_diff(&v, &want.v) < 1e-12);
    }

    #[test]
    fn static_columns_are_bit_identical() {
        let inst = grid_instance(4, 8).unwrap();
        let trace = forward(&inst, 25, StepsizeSchedule::Fixed { gamma: 0.01 }).unwrap();
        let l = trace.states[0].layout();
        let z0 = trace.states[0].matrix();
        for s in &trace.states {
            for c in l.static_columns() {
                for i in 0..=4 {
                    assert_eq!(s.matrix()[(i, c)].to_bits(), z0[(i, c)].to_bits());
                }
            }
        }
    }

    #[test]
    fn softmax_rows_sum_to_one_and_block_is_substochastic() {
        let inst = grid_instance(4, 3).unwrap().with_lambda(0.5).unwrap();
        let trace = forward(&inst, 10, StepsizeSchedule::Fixed { gamma: 0.1 }).unwrap();
        let w = build_constructed_weights(1, 0.5, 0.1).unwrap();
        for (state, pats) in trace.states.iter().zip(&trace.patterns) {
            for p in pats {
                for s in p.softmax.row_sums() {
                    assert!((s - 1.0).abs() < 1e-12);
                }
            }
            let block = attention_pattern(state, &w.heads[0], PatternVariant::Softmax).unwrap();
            let raw = attention_pattern(state, &w.heads[0], PatternVariant::RawKernel).unwrap();
            for (s, r) in block.row_sums().iter().zip(raw.row_sums()) {
                assert!(*s <= 1.0);
                assert!((s - r / (r + 1.0)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn raw_kernel_at_layer_zero_is_gibbs() {
        let inst = grid_instance(4, 5).unwrap();
        let trace = forward(&inst, 0, StepsizeSchedule::Fixed { gamma: 0.01 }).unwrap();
        assert_eq!(trace.states.len(), 1);
        let c = cost_matrix(&inst);
        let k = trace.kernel(0);
        for i in 0..4 {
            for j in 0..4 {
                let want = (-c.get(i, j) / 0.005 - 1.0).exp();
                assert!((k[(i, j)] - want).abs() <= 1e-9 * want);
            }
        }
    }

    #[test]
    fn apply_plan_examples() {
        let id = Matrix::identity(3).scale(1.0 / 3.0);
        assert_eq!(apply_plan(&id, &[1.0, 2.0, 3.0]).unwrap(), vec![1.0, 2.0, 3.0]);
        let swap = Matrix::from_rows(&[[0.0, 0.5], [0.5, 0.0]]).unwrap();
        assert_eq!(apply_plan(&swap, &[1.0, 2.0]).unwrap(), vec![2.0, 1.0]);
        let degenerate = Matrix::from_rows(&[[0.0, 0.0], [0.5, 0.5]]).unwrap();
        assert_eq!(apply_plan(&degenerate, &[1.0, 2.0]), Err(Error::DegeneratePlan(0)));
    }

    #[test]
    fn builder_rejects_bad_parameters() {
        assert!(build_constructed_weights(0, 1.0, 0.1).is_err());
        assert!(build_constructed_weights(1, 0.0, 0.1).is_err());
        assert!(build_constructed_weights(1, 1e-320, 0.1).is_err());
        assert!(build_constructed_weights(1, 1.0, -0.1).is_err());
    }

    #[test]
    fn residual_aux_update_departs_from_gd() {
        let inst = grid_instance(3, 1).unwrap().with_lambda(0.5).unwrap();
        let model = Transformer::constructed(1, 0.5, 0.2).unwrap();
        let trace = model.run(build_prompt(&inst), 5, AuxUpdate::Residual).unwrap();
        let pinned = model.run(build_prompt(&inst), 5, AuxUpdate::KeyValueOnly).unwrap();
        assert_eq!(read_dual(&trace.states[1]), read_dual(&pinned.states[1]));
        let (u, _) = read_dual(&trace.states[5]);
        let (up, _) = read_dual(&pinned.states[5]);
        assert!(crate::math::max_abs_diff(&u, &up) > 1e-6);
    }
}
