use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView1, ArrayView2, Axis, Zip};

use super::{sigmoid, Gradients, HeadId, ModelParams, Tower};
use crate::error::{Error, Result};

const NO_ROW: u32 = u32::MAX;

/// Cached forward pass of one tower for a set of entity rows.
#[derive(Clone, Debug)]
pub struct TowerActivations {
    head: HeadId,
    slot: usize,
    tower: Tower,
    rows: Vec<usize>,
    input: Array2<f64>,
    pre1: Array2<f64>,
    h1: Array2<f64>,
    pre2: Array2<f64>,
    h2: Array2<f64>,
    out: Array2<f64>,
    /// Pre-projection norms of the head output (head B only).
    norms: Vec<f64>,
    version: u64,
}

impl TowerActivations {
    pub fn forward(params: &ModelParams, head: HeadId, tower: Tower, rows: &[usize]) -> Result<Self> {
        let slot = params.slot(head)?;
        let size = match tower {
            Tower::User => params.num_users(),
            Tower::Item => params.num_items(),
        };
        if let Some(&bad) = rows.iter().find(|&&r| r >= size) {
            return Err(Error::IndexOutOfRange {
                what: tower.name(),
                index: bad,
                size,
            });
        }
        let l = *params.tower_layout(slot, tower);
        let t = |k: usize| &params.tensors[k].value;

        let input = t(l.emb).select(Axis(0), rows);
        let pre1 = input.dot(t(l.l1_w)) + t(l.l1_b);
        let h1 = pre1.mapv(relu);
        let pre2 = h1.dot(t(l.l2_w)) + t(l.l2_b);
        let h2 = pre2.mapv(relu);
        let mut out = h2.dot(t(l.head_w)) + t(l.head_b);

        let mut norms = Vec::new();
        if head == HeadId::B {
            norms.reserve(rows.len());
            for mut z in out.rows_mut() {
                let n = z.dot(&z).sqrt();
                if n > 1.0 {
                    z /= n;
                }
                norms.push(n);
            }
        }
        Ok(Self {
            head,
            slot,
            tower,
            rows: rows.to_vec(),
            input,
            pre1,
            h1,
            pre2,
            h2,
            out,
            norms,
            version: params.version(),
        })
    }

    /// Head outputs, one row per requested entity.
    pub fn output(&self) -> &Array2<f64> {
        &self.out
    }

    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    /// Accumulates `d loss / d params` given `d loss / d output` into `grads`.
    pub fn backward(&self, params: &ModelParams, d_out: &Array2<f64>, grads: &mut Gradients) -> Result<()> {
        if self.version != params.version() {
            return Err(Error::StaleActivations {
                cached: self.version,
                current: params.version(),
            });
        }
        if d_out.dim() != self.out.dim() {
            return Err(Error::Shape(format!(
                "output gradient {:?} does not match activations {:?}",
                d_out.dim(),
                self.out.dim()
            )));
        }
        let l = *params.tower_layout(self.slot, self.tower);
        let t = |k: usize| &params.tensors[k].value;

        let mut d_raw = d_out.clone();
        if self.head == HeadId::B {
            // z = r / |r| when |r| > 1: dr = (dz - z (z·dz)) / |r|
            for ((mut g, z), &n) in d_raw.rows_mut().into_iter().zip(self.out.rows()).zip(&self.norms) {
                if n > 1.0 {
                    let proj = z.dot(&g);
                    g.scaled_add(-proj, &z);
                    g /= n;
                }
            }
        }

        accumulate_linear(grads, l.head_w, l.head_b, &self.h2, &d_raw);
        let mut d_pre2 = d_raw.dot(&t(l.head_w).t());
        relu_backward(&mut d_pre2, &self.pre2);

        accumulate_linear(grads, l.l2_w, l.l2_b, &self.h1, &d_pre2);
        let mut d_pre1 = d_pre2.dot(&t(l.l2_w).t());
        relu_backward(&mut d_pre1, &self.pre1);

        accumulate_linear(grads, l.l1_w, l.l1_b, &self.input, &d_pre1);
        let d_input = d_pre1.dot(&t(l.l1_w).t());

        let emb = grads.tensor_mut(l.emb);
        for (&r, g) in self.rows.iter().zip(d_input.rows()) {
            let mut row = emb.row_mut(r);
            row += &g;
        }
        Ok(())
    }
}

fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// relu'(0) is taken as 0.
fn relu_backward(grad: &mut Array2<f64>, pre: &Array2<f64>) {
    Zip::from(grad).and(pre).for_each(|g, &p| {
        if p <= 0.0 {
            *g = 0.0;
        }
    });
}

fn accumulate_linear(grads: &mut Gradients, w: usize, b: usize, input: &Array2<f64>, d_pre: &Array2<f64>) {
    general_mat_mul(1.0, &input.t(), d_pre, 1.0, grads.tensor_mut(w));
    let db = d_pre.sum_axis(Axis(0));
    let mut bias = grads.tensor_mut(b).row_mut(0);
    bias += &db;
}

fn row_index(rows: &[usize], size: usize) -> Vec<u32> {
    let mut index = vec![NO_ROW; size];
    for (k, &r) in rows.iter().enumerate() {
        index[r] = k as u32;
    }
    index
}

fn distinct(items: &[usize]) -> Vec<usize> {
    let mut seen = std::collections::HashSet::with_capacity(items.len());
    items.iter().copied().filter(|x| seen.insert(*x)).collect()
}

/// Forward pass of one head over a set of users and a set of items, with
/// accumulators for gradients on the head outputs.
///
/// Scores are produced in raw form (inner product, or negative distance for
/// head B); [`HeadId::link`] maps them to relevance scores. Gradients are
/// added with respect to the raw values and pushed into the parameters by
/// [`HeadForward::backward`].
#[derive(Clone, Debug)]
pub struct HeadForward {
    head: HeadId,
    users: TowerActivations,
    items: TowerActivations,
    user_row: Vec<u32>,
    item_row: Vec<u32>,
    d_users: Array2<f64>,
    d_items: Array2<f64>,
}

impl HeadForward {
    pub fn new(params: &ModelParams, head: HeadId, users: &[usize], items: &[usize]) -> Result<Self> {
        let users = distinct(users);
        let items = distinct(items);
        let users = TowerActivations::forward(params, head, Tower::User, &users)?;
        let items = TowerActivations::forward(params, head, Tower::Item, &items)?;
        let user_row = row_index(users.rows(), params.num_users());
        let item_row = row_index(items.rows(), params.num_items());
        let d_users = Array2::zeros(users.output().raw_dim());
        let d_items = Array2::zeros(items.output().raw_dim());
        Ok(Self {
            head,
            users,
            items,
            user_row,
            item_row,
            d_users,
            d_items,
        })
    }

    pub fn head(&self) -> HeadId {
        self.head
    }

    pub fn user_activations(&self) -> &TowerActivations {
        &self.users
    }

    pub fn item_activations(&self) -> &TowerActivations {
        &self.items
    }

    fn rows(&self, u: usize, i: usize) -> Result<(usize, usize)> {
        let ur = self.user_row.get(u).copied().unwrap_or(NO_ROW);
        if ur == NO_ROW {
            return Err(Error::IndexOutOfRange {
                what: "encoded user",
                index: u,
                size: self.users.rows.len(),
            });
        }
        let ir = self.item_row.get(i).copied().unwrap_or(NO_ROW);
        if ir == NO_ROW {
            return Err(Error::IndexOutOfRange {
                what: "encoded item",
                index: i,
                size: self.items.rows.len(),
            });
        }
        Ok((ur as usize, ir as usize))
    }

    fn user_rows(&self, users: &[usize]) -> Result<Vec<usize>> {
        users
            .iter()
            .map(|&u| match self.user_row.get(u) {
                Some(&r) if r != NO_ROW => Ok(r as usize),
                _ => Err(Error::IndexOutOfRange {
                    what: "encoded user",
                    index: u,
                    size: self.users.rows.len(),
                }),
            })
            .collect()
    }

    fn item_rows(&self, items: &[usize]) -> Result<Vec<usize>> {
        items
            .iter()
            .map(|&i| match self.item_row.get(i) {
                Some(&r) if r != NO_ROW => Ok(r as usize),
                _ => Err(Error::IndexOutOfRange {
                    what: "encoded item",
                    index: i,
                    size: self.items.rows.len(),
                }),
            })
            .collect()
    }

    /// Raw interaction value of `(u, i)`.
    pub fn raw(&self, u: usize, i: usize) -> Result<f64> {
        let (ur, ir) = self.rows(u, i)?;
        Ok(interaction(
            self.head,
            self.users.out.row(ur),
            self.items.out.row(ir),
        ))
    }

    /// Relevance score of `(u, i)`.
    pub fn score(&self, u: usize, i: usize) -> Result<f64> {
        Ok(self.head.link(self.raw(u, i)?))
    }

    /// Adds `g · d raw(u, i) / d outputs` to the output accumulators.
    pub fn accumulate(&mut self, u: usize, i: usize, g: f64) -> Result<()> {
        if g == 0.0 {
            return Ok(());
        }
        let (ur, ir) = self.rows(u, i)?;
        let zu = self.users.out.row(ur);
        let zi = self.items.out.row(ir);
        match self.head {
            HeadId::B => {
                let diff = &zu - &zi;
                let dist = diff.dot(&diff).sqrt();
                // Zero distance: the gradient is taken as zero.
                if dist > 0.0 {
                    self.d_users.row_mut(ur).scaled_add(-g / dist, &diff);
                    self.d_items.row_mut(ir).scaled_add(g / dist, &diff);
                }
            }
            _ => {
                self.d_users.row_mut(ur).scaled_add(g, &zi);
                self.d_items.row_mut(ir).scaled_add(g, &zu);
            }
        }
        Ok(())
    }

    /// Raw values for the `users × items` block.
    pub fn raw_block(&self, users: &[usize], items: &[usize]) -> Result<Array2<f64>> {
        let zu = self.users.out.select(Axis(0), &self.user_rows(users)?);
        let zi = self.items.out.select(Axis(0), &self.item_rows(items)?);
        Ok(raw_block_of(self.head, zu.view(), zi.view()))
    }

    /// Block version of [`HeadForward::accumulate`].
    pub fn accumulate_block(&mut self, users: &[usize], items: &[usize], g: &Array2<f64>) -> Result<()> {
        if g.dim() != (users.len(), items.len()) {
            return Err(Error::Shape(format!(
                "block gradient {:?} for {}x{} block",
                g.dim(),
                users.len(),
                items.len()
            )));
        }
        let ur = self.user_rows(users)?;
        let ir = self.item_rows(items)?;
        match self.head {
            HeadId::B => {
                for (r, &u) in users.iter().enumerate() {
                    for (c, &i) in items.iter().enumerate() {
                        self.accumulate(u, i, g[[r, c]])?;
                    }
                }
            }
            _ => {
                let zu = self.users.out.select(Axis(0), &ur);
                let zi = self.items.out.select(Axis(0), &ir);
                let d_zu = g.dot(&zi);
                let d_zi = g.t().dot(&zu);
                for (&r, d) in ur.iter().zip(d_zu.rows()) {
                    let mut row = self.d_users.row_mut(r);
                    row += &d;
                }
                for (&r, d) in ir.iter().zip(d_zi.rows()) {
                    let mut row = self.d_items.row_mut(r);
                    row += &d;
                }
            }
        }
        Ok(())
    }

    /// Pushes the accumulated output gradients through both towers.
    pub fn backward(&self, params: &ModelParams, grads: &mut Gradients) -> Result<()> {
        self.users.backward(params, &self.d_users, grads)?;
        self.items.backward(params, &self.d_items, grads)
    }

    /// Clears the output accumulators.
    pub fn reset_gradients(&mut self) {
        self.d_users.fill(0.0);
        self.d_items.fill(0.0);
    }
}

pub(crate) fn interaction(head: HeadId, zu: ArrayView1<f64>, zi: ArrayView1<f64>) -> f64 {
    match head {
        HeadId::B => -zu
            .iter()
            .zip(zi.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt(),
        _ => zu.dot(&zi),
    }
}

/// Raw interaction values between every row of `zu` and every row of `zi`.
pub(crate) fn raw_block_of(head: HeadId, zu: ArrayView2<f64>, zi: ArrayView2<f64>) -> Array2<f64> {
    match head {
        HeadId::B => {
            let mut out = Array2::zeros((zu.nrows(), zi.nrows()));
            for (r, a) in zu.rows().into_iter().enumerate() {
                for (c, b) in zi.rows().into_iter().enumerate() {
                    out[[r, c]] = interaction(HeadId::B, a, b);
                }
            }
            out
        }
        _ => zu.dot(&zi.t()),
    }
}

/// Head outputs for every user and every item, for scoring whole rows of
/// the preference matrix.
#[derive(Clone, Debug)]
pub struct FullScorer {
    head: HeadId,
    users: Array2<f64>,
    items: Array2<f64>,
}

impl FullScorer {
    pub fn new(params: &ModelParams, head: HeadId) -> Result<Self> {
        let all_users: Vec<usize> = (0..params.num_users()).collect();
        let all_items: Vec<usize> = (0..params.num_items()).collect();
        let users = TowerActivations::forward(params, head, Tower::User, &all_users)?.out;
        let items = TowerActivations::forward(params, head, Tower::Item, &all_items)?.out;
        Ok(Self { head, users, items })
    }

    pub fn head(&self) -> HeadId {
        self.head
    }

    pub fn num_users(&self) -> usize {
        self.users.nrows()
    }

    /// Relevance scores of `users` against every item.
    pub fn scores(&self, users: &[usize]) -> Result<Array2<f64>> {
        if let Some(&bad) = users.iter().find(|&&u| u >= self.users.nrows()) {
            return Err(Error::IndexOutOfRange {
                what: "user",
                index: bad,
                size: self.users.nrows(),
            });
        }
        let zu = self.users.select(Axis(0), users);
        let mut block = raw_block_of(self.head, zu.view(), self.items.view());
        if self.head == HeadId::C {
            block.mapv_inplace(sigmoid);
        }
        Ok(block)
    }
}

#[cfg(test)]
mod tests {
    use ndarray::array;

    use super::*;
    use crate::model::{ModelShape, SharingLevel};

    fn model(sharing: SharingLevel, seed: u64) -> ModelParams {
        ModelParams::init(
            ModelShape {
                num_users: 6,
                num_items: 7,
                dim: 8,
                sharing,
                heads: HeadId::ALL.to_vec(),
            },
            seed,
        )
        .unwrap()
    }

    #[test]
    fn interaction_values() {
        let zu = array![1.0, 0.0, 0.0];
        let zi = array![2.0, 0.0, 0.0];
        assert_eq!(interaction(HeadId::A, zu.view(), zi.view()), 2.0);
        assert_eq!(interaction(HeadId::B, zu.view(), zu.view()), 0.0);
        let z0 = array![0.0, 1.0, 0.0];
        assert_eq!(HeadId::C.link(interaction(HeadId::C, zu.view(), z0.view())), 0.5);
        assert_eq!(interaction(HeadId::B, zu.view(), zi.view()), -1.0);
    }

    #[test]
    fn batch_scores_match_single_scores() {
        let p = model(SharingLevel::EmbeddingOnly, 1);
        for head in HeadId::ALL {
            let block = p.score_batch(head, &[2], None).unwrap();
            let full = FullScorer::new(&p, head).unwrap().scores(&[2]).unwrap();
            assert_eq!(block, full);
            assert_eq!(block.dim(), (1, 7));
            for i in 0..7 {
                assert!((block[[0, i]] - p.score(head, 2, i).unwrap()).abs() < 1e-14);
            }
            assert_eq!(p.score_batch(head, &[0, 1], Some(&[3, 4, 5])).unwrap().dim(), (2, 3));
            assert_eq!(p.score_batch(head, &[0], Some(&[])).unwrap().dim(), (1, 0));
        }
    }

    #[test]
    fn score_ranges() {
        let mut p = model(SharingLevel::EmbeddingOnly, 2);
        // Inflate everything so head B's projection is active.
        for t in p.tensors_mut() {
            t.value.mapv_inplace(|x| x * 40.0 + 0.01);
        }
        for u in 0..6 {
            for i in 0..7 {
                assert!(p.score(HeadId::B, u, i).unwrap() <= 0.0);
                let c = p.score(HeadId::C, u, i).unwrap();
                assert!(c > 0.0 && c < 1.0 || c == 1.0 || c == 0.0);
            }
        }
        let fwd = HeadForward::new(&p, HeadId::B, &[0, 1], &[0, 1]).unwrap();
        for z in fwd.user_activations().output().rows() {
            assert!(z.dot(&z).sqrt() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn out_of_range_index() {
        let p = model(SharingLevel::Full, 0);
        assert!(matches!(p.score(HeadId::A, 6, 0), Err(Error::IndexOutOfRange { .. })));
        assert!(matches!(p.score(HeadId::A, 0, 7), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_parameter_gradient() {
        let p = model(SharingLevel::EmbeddingOnly, 3);
        let mut fwd = HeadForward::new(&p, HeadId::A, &[0, 1], &[2, 3]).unwrap();
        fwd.accumulate(0, 2, 0.0).unwrap();
        let mut g = Gradients::zeros_like(&p);
        fwd.backward(&p, &mut g).unwrap();
        assert!(g.is_zero());
    }

    #[test]
    fn stale_cache_is_detected() {
        let mut p = model(SharingLevel::EmbeddingOnly, 4);
        let mut fwd = HeadForward::new(&p, HeadId::A, &[0], &[1]).unwrap();
        fwd.accumulate(0, 1, 1.0).unwrap();
        p.tensors_mut();
        let mut g = Gradients::zeros_like(&p);
        assert!(matches!(fwd.backward(&p, &mut g), Err(Error::StaleActivations { .. })));
    }

    #[test]
    fn zero_distance_gradient_is_zero() {
        let p = model(SharingLevel::EmbeddingOnly, 5);
        // Same index in both towers does not mean equal vectors, so force it.
        let mut fwd = HeadForward::new(&p, HeadId::B, &[0], &[0]).unwrap();
        fwd.items.out = fwd.users.out.clone();
        fwd.accumulate(0, 0, 1.0).unwrap();
        assert!(fwd.d_users.iter().all(|&x| x == 0.0));
        assert!(fwd.d_items.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn embedding_only_heads_are_isolated() {
        let mut p = model(SharingLevel::EmbeddingOnly, 6);
        let before = p.score_batch(HeadId::B, &[0, 1, 2], None).unwrap();
        let k = p.tensor_index("A.user_l1_w").unwrap();
        p.tensors_mut()[k].value.mapv_inplace(|x| x + 0.5);
        let after = p.score_batch(HeadId::B, &[0, 1, 2], None).unwrap();
        assert_eq!(before, after);
        assert_ne!(
            p.score_batch(HeadId::A, &[0], None).unwrap(),
            model(SharingLevel::EmbeddingOnly, 6).score_batch(HeadId::A, &[0], None).unwrap()
        );
    }

    /// Central differences on a linear functional of the raw scores.
    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let base = model(SharingLevel::EmbeddingOnly, 7);
        let mut base = base;
        for t in base.tensors_mut() {
            // Larger embeddings so every relu and the unit-ball projection see real signal.
            if t.name.ends_with("_emb") {
                t.value.mapv_inplace(|x| x * 100.0);
            }
        }
        let pairs = [(0usize, 1usize, 0.7), (1, 2, -1.3), (0, 2, 0.4), (3, 1, 1.1)];
        let users: Vec<_> = pairs.iter().map(|p| p.0).collect();
        let items: Vec<_> = pairs.iter().map(|p| p.1).collect();
        for head in HeadId::ALL {
            let objective = |p: &ModelParams| -> f64 {
                let f = HeadForward::new(p, head, &users, &items).unwrap();
                pairs.iter().map(|&(u, i, w)| w * f.raw(u, i).unwrap()).sum()
            };
            let mut fwd = HeadForward::new(&base, head, &users, &items).unwrap();
            for &(u, i, w) in &pairs {
                fwd.accumulate(u, i, w).unwrap();
            }
            let mut g = Gradients::zeros_like(&base);
            fwd.backward(&base, &mut g).unwrap();

            let eps = 1e-5;
            for k in base.head_tensors(head).unwrap() {
                for idx in 0..base.tensors()[k].value.len() {
                    let mut plus = base.clone();
                    plus.tensors_mut()[k].value.as_slice_mut().unwrap()[idx] += eps;
                    let mut minus = base.clone();
                    minus.tensors_mut()[k].value.as_slice_mut().unwrap()[idx] -= eps;
                    let numeric = (objective(&plus) - objective(&minus)) / (2.0 * eps);
                    let analytic = g.tensors()[k].as_slice().unwrap()[idx];
                    let err = (numeric - analytic).abs();
                    assert!(
                        err < 1e-6 || err / numeric.abs().max(analytic.abs()) < 1e-4,
                        "head {head} tensor {} [{idx}]: analytic {analytic} numeric {numeric}",
                        base.tensors()[k].name
                    );
                }
            }
        }
    }
}
