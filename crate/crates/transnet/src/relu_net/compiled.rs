//! Fast exact evaluator for large networks.
//!
//! A ReLU layer followed by an affine layer is merged into a "pair step".
//! Rows of the second layer whose support consists of many univariate
//! neurons on one common input are turned into piecewise-linear tables with
//! sorted breakpoints, evaluated by binary search. Everything else is
//! evaluated sparsely, computing only the neurons still needed.

use super::{relu, Activation, AffineLayer, Layer, LayerBuilder, ReluNetwork};

const MIN_TABLE_SUPPORT: usize = 4;

#[derive(Clone, Debug)]
struct PlTable {
    input: u32,
    // neurons with positive slope, sorted by breakpoint; prefix sums
    pos_break: Vec<f64>,
    pos_cw: Vec<f64>,
    pos_cb: Vec<f64>,
    // neurons with negative slope, sorted by breakpoint; suffix sums
    neg_break: Vec<f64>,
    neg_cw: Vec<f64>,
    neg_cb: Vec<f64>,
}

impl PlTable {
    fn build(input: u32, mut pos: Vec<(f64, f64, f64)>, mut neg: Vec<(f64, f64, f64)>) -> Self {
        // entries are (breakpoint, c*w, c*b)
        pos.sort_by(|a, b| a.0.total_cmp(&b.0));
        neg.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut pos_cw = vec![0.0; pos.len() + 1];
        let mut pos_cb = vec![0.0; pos.len() + 1];
        for (k, e) in pos.iter().enumerate() {
            pos_cw[k + 1] = pos_cw[k] + e.1;
            pos_cb[k + 1] = pos_cb[k] + e.2;
        }
        let mut neg_cw = vec![0.0; neg.len() + 1];
        let mut neg_cb = vec![0.0; neg.len() + 1];
        for (k, e) in neg.iter().enumerate().rev() {
            neg_cw[k] = neg_cw[k + 1] + e.1;
            neg_cb[k] = neg_cb[k + 1] + e.2;
        }
        Self {
            input,
            pos_break: pos.iter().map(|e| e.0).collect(),
            pos_cw,
            pos_cb,
            neg_break: neg.iter().map(|e| e.0).collect(),
            neg_cw,
            neg_cb,
        }
    }

    #[inline]
    fn eval(&self, x: f64) -> f64 {
        // w > 0: active iff x > -b/w ; w < 0: active iff x < -b/w
        let n = self.pos_break.partition_point(|&b| b < x);
        let m = self.neg_break.partition_point(|&b| b <= x);
        x * (self.pos_cw[n] + self.neg_cw[m]) + self.pos_cb[n] + self.neg_cb[m]
    }

    fn heap_bytes(&self) -> usize {
        8 * (self.pos_break.len() * 3 + self.neg_break.len() * 3 + 4)
    }
}

#[derive(Clone, Debug)]
struct PairStep {
    hidden: AffineLayer,
    next: AffineLayer,
    tables: Vec<(u32, PlTable)>,
}

#[derive(Clone, Debug)]
enum Step {
    Plain(Layer),
    Pair(PairStep),
}

/// Evaluation-only form of a [`ReluNetwork`]; agrees with
/// [`ReluNetwork::eval`] up to floating-point reassociation.
#[derive(Clone, Debug)]
pub struct CompiledNet {
    in_dim: usize,
    out_dim: usize,
    steps: Vec<Step>,
}

fn try_pair(hidden: &AffineLayer, next: &AffineLayer) -> Option<PairStep> {
    let univariate: Vec<Option<(u32, f64)>> = (0..hidden.out_dim())
        .map(|r| {
            let (c, v) = hidden.row(r);
            (c.len() == 1).then(|| (c[0], v[0]))
        })
        .collect();
    let mut tables = Vec::new();
    let mut is_table = vec![false; next.out_dim()];
    for o in 0..next.out_dim() {
        let (c, _) = next.row(o);
        if c.len() < MIN_TABLE_SUPPORT {
            continue;
        }
        let input = match univariate[c[0] as usize] {
            Some((i, _)) => i,
            None => continue,
        };
        if c.iter().all(|k| matches!(univariate[*k as usize], Some((i, _)) if i == input)) {
            is_table[o] = true;
        }
    }
    if !is_table.iter().any(|t| *t) {
        return None;
    }
    let mut needed = vec![false; hidden.out_dim()];
    for o in 0..next.out_dim() {
        if !is_table[o] {
            for k in next.row(o).0 {
                needed[*k as usize] = true;
            }
        }
    }
    let mut remap = vec![u32::MAX; hidden.out_dim()];
    let mut hb = LayerBuilder::new(hidden.in_dim());
    for r in 0..hidden.out_dim() {
        if needed[r] {
            remap[r] = hb.rows() as u32;
            let (c, v) = hidden.row(r);
            hb.push_row(c.iter().zip(v).map(|(c, v)| (*c as usize, *v)), hidden.biases()[r]);
        }
    }
    let sub = hb.finish(Activation::Relu).ok()?;
    let mut nb = LayerBuilder::new(sub.out_dim());
    for o in 0..next.out_dim() {
        let (c, v) = next.row(o);
        if is_table[o] {
            nb.push_row(std::iter::empty(), next.biases()[o]);
            let (mut pos, mut neg) = (Vec::new(), Vec::new());
            let mut input = 0;
            for (k, coef) in c.iter().zip(v) {
                let (i, w) = univariate[*k as usize].expect("checked univariate");
                input = i;
                let b = hidden.biases()[*k as usize];
                let e = (-b / w, coef * w, coef * b);
                if w > 0.0 {
                    pos.push(e);
                } else {
                    neg.push(e);
                }
            }
            tables.push((o as u32, PlTable::build(input, pos, neg)));
        } else {
            nb.push_row(c.iter().zip(v).map(|(c, v)| (remap[*c as usize] as usize, *v)), next.biases()[o]);
        }
    }
    let nxt = nb.finish(next.activation()).ok()?;
    Some(PairStep { hidden: sub, next: nxt, tables })
}

impl CompiledNet {
    pub fn new(net: &ReluNetwork) -> Self {
        let layers = net.layers();
        let mut steps = Vec::new();
        let mut k = 0;
        while k < layers.len() {
            if k + 1 < layers.len() {
                if let (Layer::Affine(h), Layer::Affine(n)) = (&layers[k], &layers[k + 1]) {
                    if h.activation() == Activation::Relu {
                        if let Some(p) = try_pair(h, n) {
                            steps.push(Step::Pair(p));
                            k += 2;
                            continue;
                        }
                    }
                }
            }
            steps.push(Step::Plain(layers[k].clone()));
            k += 1;
        }
        Self { in_dim: net.in_dim(), out_dim: net.out_dim(), steps }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    /// Number of piecewise-linear tables in use.
    pub fn table_count(&self) -> usize {
        self.steps.iter().map(|s| if let Step::Pair(p) = s { p.tables.len() } else { 0 }).sum()
    }

    /// Approximate heap footprint of the tables in bytes.
    pub fn table_bytes(&self) -> usize {
        self.steps
            .iter()
            .map(|s| if let Step::Pair(p) = s { p.tables.iter().map(|t| t.1.heap_bytes()).sum() } else { 0 })
            .sum()
    }

    /// Evaluates into `out`; `x` must have length `in_dim`.
    pub fn eval_into(&self, x: &[f64], out: &mut Vec<f64>) {
        debug_assert_eq!(x.len(), self.in_dim);
        let mut a = x.to_vec();
        let mut h = Vec::new();
        for step in &self.steps {
            match step {
                Step::Plain(l) => l.apply(&a, out),
                Step::Pair(p) => {
                    p.hidden.apply(&a, &mut h);
                    p.next.apply(&h, out);
                    if !p.tables.is_empty() {
                        let identity = p.next.activation() == Activation::Identity;
                        for (o, t) in &p.tables {
                            let o = *o as usize;
                            let pre = p.next.biases()[o] + t.eval(a[t.input as usize]);
                            out[o] = if identity { pre } else { relu(pre) };
                        }
                    }
                }
            }
            std::mem::swap(&mut a, out);
        }
        std::mem::swap(&mut a, out);
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.out_dim);
        self.eval_into(x, &mut out);
        out
    }
}
