//! Central finite-difference checks for every learnable operation:
//! max relative error <= 1e-4 at eps = 1e-5, denominators floored at
//! 1e-8, ten seeds per op.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use evrisk_core::nn::{
    attention, attention_backward, gru_backward, gru_step, linear_backward, linear_forward,
    spline_conv_backward, spline_conv_forward, weighted_cross_entropy,
    weighted_cross_entropy_backward, AttentionGrads, AttentionParams, ConvEdge, GruGrads,
    GruParams, LinearGrads, LinearParams, SplineKernel, SplineKernelGrads, Tensor,
};
use evrisk_core::oracle::{finite_diff_grad, max_rel_err};

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-4;
const FLOOR: f64 = 1e-8;
const SEEDS: u64 = 10;

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

// ---------------------------------------------------------------------------
// Spline convolution: gradients w.r.t. control matrices, self weight, and
// node inputs.
// ---------------------------------------------------------------------------

struct SplineCase {
    grid: usize,
    in_dim: usize,
    out_dim: usize,
    n_nodes: usize,
    edges: Vec<ConvEdge>,
    proj: Vec<Vec<f64>>,
    residual: bool,
}

impl SplineCase {
    fn new(rng: &mut ChaCha8Rng, residual: bool) -> Self {
        let in_dim = 3;
        let out_dim = if residual { 3 } else { 4 };
        let n_nodes = 8;
        let mut edges = Vec::new();
        for dst in 1..n_nodes {
            for _ in 0..rng.gen_range(0..4usize) {
                edges.push(ConvEdge {
                    src: rng.gen_range(0..dst) as u32,
                    dst: dst as u32,
                    feat: [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)],
                });
            }
        }
        let proj = (0..n_nodes).map(|_| rand_vec(rng, out_dim)).collect();
        SplineCase { grid: 3, in_dim, out_dim, n_nodes, edges, proj, residual }
    }

    fn param_count(&self) -> usize {
        let per = self.in_dim * self.out_dim;
        (self.grid * self.grid + 1) * per + self.n_nodes * self.in_dim
    }

    fn unpack(&self, theta: &[f64]) -> (SplineKernel, Vec<Vec<f64>>) {
        let per = self.in_dim * self.out_dim;
        let mut kernel = SplineKernel::zeros(self.grid, self.in_dim, self.out_dim).unwrap();
        let mut off = 0;
        for c in &mut kernel.control {
            *c = Tensor::from_vec(&[self.out_dim, self.in_dim], theta[off..off + per].to_vec()).unwrap();
            off += per;
        }
        kernel.self_weight =
            Tensor::from_vec(&[self.out_dim, self.in_dim], theta[off..off + per].to_vec()).unwrap();
        off += per;
        let inputs: Vec<Vec<f64>> = (0..self.n_nodes)
            .map(|i| theta[off + i * self.in_dim..off + (i + 1) * self.in_dim].to_vec())
            .collect();
        (kernel, inputs)
    }

    fn loss(&self, theta: &[f64]) -> f64 {
        let (kernel, inputs) = self.unpack(theta);
        let (out, _) = spline_conv_forward(&kernel, &inputs, &self.edges, self.residual).unwrap();
        out.iter()
            .zip(&self.proj)
            .map(|(o, p)| o.iter().zip(p).map(|(a, b)| a * b).sum::<f64>())
            .sum()
    }

    fn analytic(&self, theta: &[f64]) -> Vec<f64> {
        let (kernel, inputs) = self.unpack(theta);
        let (_, cache) = spline_conv_forward(&kernel, &inputs, &self.edges, self.residual).unwrap();
        let mut grads = SplineKernelGrads::zeros_like(&kernel);
        let d_in = spline_conv_backward(&kernel, &cache, &self.edges, &self.proj, &mut grads);
        let mut g = Vec::with_capacity(self.param_count());
        for c in &grads.control {
            g.extend_from_slice(c.data());
        }
        g.extend_from_slice(grads.self_weight.data());
        for row in &d_in {
            g.extend_from_slice(row);
        }
        g
    }
}

#[test]
fn spline_conv_gradients_match_finite_differences() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let residual = seed % 2 == 0;
        let case = SplineCase::new(&mut rng, residual);
        let theta = rand_vec(&mut rng, case.param_count());
        let analytic = case.analytic(&theta);
        let numeric = finite_diff_grad(|t| case.loss(t), &theta, EPS);
        let err = max_rel_err(&analytic, &numeric, FLOOR);
        assert!(err <= TOL, "seed {seed}: max rel err {err}");
    }
}

// ---------------------------------------------------------------------------
// GRU step.
// ---------------------------------------------------------------------------

struct GruCase {
    nin: usize,
    nh: usize,
    proj: Vec<f64>,
}

impl GruCase {
    fn param_count(&self) -> usize {
        3 * (self.nh * self.nin + self.nh * self.nh + self.nh) + self.nin + self.nh
    }

    fn unpack(&self, theta: &[f64]) -> (GruParams, Vec<f64>, Vec<f64>) {
        let (nin, nh) = (self.nin, self.nh);
        let mut p = GruParams::zeros(nin, nh);
        let mut off = 0;
        let mut take = |len: usize, theta: &[f64]| {
            let s = theta[off..off + len].to_vec();
            off += len;
            s
        };
        p.w_z = Tensor::from_vec(&[nh, nin], take(nh * nin, theta)).unwrap();
        p.u_z = Tensor::from_vec(&[nh, nh], take(nh * nh, theta)).unwrap();
        p.b_z = Tensor::from_vec(&[nh], take(nh, theta)).unwrap();
        p.w_r = Tensor::from_vec(&[nh, nin], take(nh * nin, theta)).unwrap();
        p.u_r = Tensor::from_vec(&[nh, nh], take(nh * nh, theta)).unwrap();
        p.b_r = Tensor::from_vec(&[nh], take(nh, theta)).unwrap();
        p.w_h = Tensor::from_vec(&[nh, nin], take(nh * nin, theta)).unwrap();
        p.u_h = Tensor::from_vec(&[nh, nh], take(nh * nh, theta)).unwrap();
        p.b_h = Tensor::from_vec(&[nh], take(nh, theta)).unwrap();
        let x = take(nin, theta);
        let h = take(nh, theta);
        (p, x, h)
    }

    fn loss(&self, theta: &[f64]) -> f64 {
        let (p, x, h) = self.unpack(theta);
        let (h2, _) = gru_step(&p, &x, &h).unwrap();
        h2.iter().zip(&self.proj).map(|(a, b)| a * b).sum()
    }

    fn analytic(&self, theta: &[f64]) -> Vec<f64> {
        let (p, x, h) = self.unpack(theta);
        let (_, cache) = gru_step(&p, &x, &h).unwrap();
        let mut grads = GruGrads::zeros_like(&p);
        let (dx, dh) = gru_backward(&p, &cache, &self.proj, &mut grads);
        let mut g = Vec::new();
        for t in [&grads.w_z, &grads.u_z, &grads.b_z, &grads.w_r, &grads.u_r, &grads.b_r, &grads.w_h, &grads.u_h, &grads.b_h] {
            g.extend_from_slice(t.data());
        }
        g.extend_from_slice(&dx);
        g.extend_from_slice(&dh);
        g
    }
}

#[test]
fn gru_gradients_match_finite_differences() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + seed);
        let case = GruCase { nin: 3, nh: 5, proj: rand_vec(&mut rng, 5) };
        let theta = rand_vec(&mut rng, case.param_count());
        let analytic = case.analytic(&theta);
        let numeric = finite_diff_grad(|t| case.loss(t), &theta, EPS);
        let err = max_rel_err(&analytic, &numeric, FLOOR);
        assert!(err <= TOL, "seed {seed}: max rel err {err}");
    }
}

// ---------------------------------------------------------------------------
// Attention.
// ---------------------------------------------------------------------------

struct AttnCase {
    n: usize,
    dim: usize,
    proj: Vec<Vec<f64>>,
}

impl AttnCase {
    fn unpack(&self, theta: &[f64]) -> (AttentionParams, Vec<Vec<f64>>) {
        let mut p = AttentionParams::zeros(self.dim);
        p.w = Tensor::from_vec(&[self.dim], theta[..self.dim].to_vec()).unwrap();
        let rows = (0..self.n)
            .map(|i| theta[self.dim + i * self.dim..self.dim + (i + 1) * self.dim].to_vec())
            .collect();
        (p, rows)
    }

    fn loss(&self, theta: &[f64]) -> f64 {
        let (p, rows) = self.unpack(theta);
        let (_, weighted, _) = attention(&p, &rows).unwrap();
        weighted
            .iter()
            .zip(&self.proj)
            .map(|(w, pr)| w.iter().zip(pr).map(|(a, b)| a * b).sum::<f64>())
            .sum()
    }

    fn analytic(&self, theta: &[f64]) -> Vec<f64> {
        let (p, rows) = self.unpack(theta);
        let (_, _, cache) = attention(&p, &rows).unwrap();
        let mut grads = AttentionGrads::zeros_like(&p);
        let d_rows = attention_backward(&p, &cache, &self.proj, &mut grads);
        let mut g = grads.w.data().to_vec();
        for r in &d_rows {
            g.extend_from_slice(r);
        }
        g
    }
}

#[test]
fn attention_gradients_match_finite_differences() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(3000 + seed);
        let (n, dim) = (4, 5);
        let proj = (0..n).map(|_| rand_vec(&mut rng, dim)).collect();
        let case = AttnCase { n, dim, proj };
        let theta = rand_vec(&mut rng, dim + n * dim);
        let analytic = case.analytic(&theta);
        let numeric = finite_diff_grad(|t| case.loss(t), &theta, EPS);
        let err = max_rel_err(&analytic, &numeric, FLOOR);
        assert!(err <= TOL, "seed {seed}: max rel err {err}");
    }
}

// ---------------------------------------------------------------------------
// Linear layer and weighted cross-entropy.
// ---------------------------------------------------------------------------

#[test]
fn linear_gradients_match_finite_differences() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(4000 + seed);
        let (nin, nout) = (6, 4);
        let proj = rand_vec(&mut rng, nout);
        let theta = rand_vec(&mut rng, nout * nin + nout + nin);
        let unpack = |t: &[f64]| {
            let w = Tensor::from_vec(&[nout, nin], t[..nout * nin].to_vec()).unwrap();
            let b = Tensor::from_vec(&[nout], t[nout * nin..nout * nin + nout].to_vec()).unwrap();
            let x = t[nout * nin + nout..].to_vec();
            (LinearParams { weight: w, bias: b }, x)
        };
        let loss = |t: &[f64]| {
            let (p, x) = unpack(t);
            let (y, _) = linear_forward(&p, &x).unwrap();
            y.iter().zip(&proj).map(|(a, b)| a * b).sum::<f64>()
        };
        let (p, x) = unpack(&theta);
        let (_, cache) = linear_forward(&p, &x).unwrap();
        let mut grads = LinearGrads::zeros_like(&p);
        let dx = linear_backward(&p, &cache, &proj, &mut grads);
        let mut analytic = grads.weight.data().to_vec();
        analytic.extend_from_slice(grads.bias.data());
        analytic.extend_from_slice(&dx);
        let numeric = finite_diff_grad(loss, &theta, EPS);
        let err = max_rel_err(&analytic, &numeric, FLOOR);
        assert!(err <= TOL, "seed {seed}: max rel err {err}");
    }
}

#[test]
fn weighted_cross_entropy_gradients_match_finite_differences() {
    let weights = [0.27, 1.0];
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(5000 + seed);
        let label = (seed % 2) as usize;
        let theta = rand_vec(&mut rng, 2);
        let loss = |t: &[f64]| weighted_cross_entropy(t, label, &weights).unwrap().0;
        let (_, probs) = weighted_cross_entropy(&theta, label, &weights).unwrap();
        let analytic = weighted_cross_entropy_backward(&probs, label, &weights, 1.0);
        let numeric = finite_diff_grad(loss, &theta, EPS);
        let err = max_rel_err(&analytic, &numeric, FLOOR);
        assert!(err <= TOL, "seed {seed}: max rel err {err}");
    }
}

// ---------------------------------------------------------------------------
// Full head: GRU -> attention -> linear -> softmax -> loss over 3 objects
// and 4 timesteps, with recurrent carry through time.
// ---------------------------------------------------------------------------

struct HeadCase {
    n_obj: usize,
    steps: usize,
    b_dim: usize,
    f_dim: usize,
    hb: usize,
    hf: usize,
    labels: Vec<Vec<usize>>,
    weights: [f64; 2],
}

struct HeadParams {
    gru_b: GruParams,
    gru_f: GruParams,
    attn_b: AttentionParams,
    attn_f: AttentionParams,
    cls: LinearParams,
}

impl HeadCase {
    fn param_count(&self) -> usize {
        let gru = |nin: usize, nh: usize| 3 * (nh * nin + nh * nh + nh);
        gru(self.b_dim, self.hb)
            + gru(self.f_dim, self.hf)
            + self.hb
            + self.hf
            + 2 * (self.hb + self.hf)
            + 2
            + self.steps * self.n_obj * (self.b_dim + self.f_dim)
    }

    fn unpack(&self, theta: &[f64]) -> (HeadParams, Vec<Vec<Vec<f64>>>, Vec<Vec<Vec<f64>>>) {
        struct Cursor<'a> {
            data: &'a [f64],
            off: usize,
        }
        impl<'a> Cursor<'a> {
            fn take(&mut self, len: usize) -> Vec<f64> {
                let s = self.data[self.off..self.off + len].to_vec();
                self.off += len;
                s
            }
            fn gru(&mut self, nin: usize, nh: usize) -> GruParams {
                let mut p = GruParams::zeros(nin, nh);
                p.w_z = Tensor::from_vec(&[nh, nin], self.take(nh * nin)).unwrap();
                p.u_z = Tensor::from_vec(&[nh, nh], self.take(nh * nh)).unwrap();
                p.b_z = Tensor::from_vec(&[nh], self.take(nh)).unwrap();
                p.w_r = Tensor::from_vec(&[nh, nin], self.take(nh * nin)).unwrap();
                p.u_r = Tensor::from_vec(&[nh, nh], self.take(nh * nh)).unwrap();
                p.b_r = Tensor::from_vec(&[nh], self.take(nh)).unwrap();
                p.w_h = Tensor::from_vec(&[nh, nin], self.take(nh * nin)).unwrap();
                p.u_h = Tensor::from_vec(&[nh, nh], self.take(nh * nh)).unwrap();
                p.b_h = Tensor::from_vec(&[nh], self.take(nh)).unwrap();
                p
            }
        }
        let mut cur = Cursor { data: theta, off: 0 };
        let gru_b = cur.gru(self.b_dim, self.hb);
        let gru_f = cur.gru(self.f_dim, self.hf);
        let attn_b = AttentionParams { w: Tensor::from_vec(&[self.hb], cur.take(self.hb)).unwrap() };
        let attn_f = AttentionParams { w: Tensor::from_vec(&[self.hf], cur.take(self.hf)).unwrap() };
        let cls = LinearParams {
            weight: Tensor::from_vec(&[2, self.hb + self.hf], cur.take(2 * (self.hb + self.hf))).unwrap(),
            bias: Tensor::from_vec(&[2], cur.take(2)).unwrap(),
        };
        let mut b_in = Vec::with_capacity(self.steps);
        let mut f_in = Vec::with_capacity(self.steps);
        for _ in 0..self.steps {
            let mut bt = Vec::with_capacity(self.n_obj);
            let mut ft = Vec::with_capacity(self.n_obj);
            for _ in 0..self.n_obj {
                bt.push(cur.take(self.b_dim));
                ft.push(cur.take(self.f_dim));
            }
            b_in.push(bt);
            f_in.push(ft);
        }
        (HeadParams { gru_b, gru_f, attn_b, attn_f, cls }, b_in, f_in)
    }

    fn loss(&self, theta: &[f64]) -> f64 {
        let (p, b_in, f_in) = self.unpack(theta);
        let mut h_b = vec![vec![0.0; self.hb]; self.n_obj];
        let mut h_f = vec![vec![0.0; self.hf]; self.n_obj];
        let mut loss = 0.0;
        for t in 0..self.steps {
            for i in 0..self.n_obj {
                h_b[i] = gru_step(&p.gru_b, &b_in[t][i], &h_b[i]).unwrap().0;
                h_f[i] = gru_step(&p.gru_f, &f_in[t][i], &h_f[i]).unwrap().0;
            }
            let (_, wb, _) = attention(&p.attn_b, &h_b).unwrap();
            let (_, wf, _) = attention(&p.attn_f, &h_f).unwrap();
            for i in 0..self.n_obj {
                let mut unified = wb[i].clone();
                unified.extend_from_slice(&wf[i]);
                let (logits, _) = linear_forward(&p.cls, &unified).unwrap();
                loss += weighted_cross_entropy(&logits, self.labels[t][i], &self.weights).unwrap().0;
            }
        }
        loss
    }

    fn analytic(&self, theta: &[f64]) -> Vec<f64> {
        let (p, b_in, f_in) = self.unpack(theta);
        // Forward with tapes.
        let mut h_b = vec![vec![0.0; self.hb]; self.n_obj];
        let mut h_f = vec![vec![0.0; self.hf]; self.n_obj];
        let mut tapes = Vec::new();
        for t in 0..self.steps {
            let mut gb = Vec::new();
            let mut gf = Vec::new();
            for i in 0..self.n_obj {
                let (hb2, cb) = gru_step(&p.gru_b, &b_in[t][i], &h_b[i]).unwrap();
                let (hf2, cf) = gru_step(&p.gru_f, &f_in[t][i], &h_f[i]).unwrap();
                h_b[i] = hb2;
                h_f[i] = hf2;
                gb.push(cb);
                gf.push(cf);
            }
            let (_, wb, ab) = attention(&p.attn_b, &h_b).unwrap();
            let (_, wf, af) = attention(&p.attn_f, &h_f).unwrap();
            let mut cls_caches = Vec::new();
            let mut probs = Vec::new();
            for i in 0..self.n_obj {
                let mut unified = wb[i].clone();
                unified.extend_from_slice(&wf[i]);
                let (logits, cc) = linear_forward(&p.cls, &unified).unwrap();
                let (_, pr) = weighted_cross_entropy(&logits, self.labels[t][i], &self.weights).unwrap();
                cls_caches.push(cc);
                probs.push(pr);
            }
            tapes.push((gb, gf, ab, af, cls_caches, probs));
        }
        // Backward.
        let mut g_gru_b = GruGrads::zeros_like(&p.gru_b);
        let mut g_gru_f = GruGrads::zeros_like(&p.gru_f);
        let mut g_attn_b = AttentionGrads::zeros_like(&p.attn_b);
        let mut g_attn_f = AttentionGrads::zeros_like(&p.attn_f);
        let mut g_cls = LinearGrads::zeros_like(&p.cls);
        let mut d_b_in = vec![vec![vec![0.0; self.b_dim]; self.n_obj]; self.steps];
        let mut d_f_in = vec![vec![vec![0.0; self.f_dim]; self.n_obj]; self.steps];
        let mut carry_b = vec![vec![0.0; self.hb]; self.n_obj];
        let mut carry_f = vec![vec![0.0; self.hf]; self.n_obj];
        for t in (0..self.steps).rev() {
            let (gb, gf, ab, af, cls_caches, probs) = &tapes[t];
            let mut dwb = Vec::new();
            let mut dwf = Vec::new();
            for i in 0..self.n_obj {
                let dlogits = weighted_cross_entropy_backward(&probs[i], self.labels[t][i], &self.weights, 1.0);
                let du = linear_backward(&p.cls, &cls_caches[i], &dlogits, &mut g_cls);
                dwb.push(du[..self.hb].to_vec());
                dwf.push(du[self.hb..].to_vec());
            }
            let dhb_rows = attention_backward(&p.attn_b, ab, &dwb, &mut g_attn_b);
            let dhf_rows = attention_backward(&p.attn_f, af, &dwf, &mut g_attn_f);
            for i in 0..self.n_obj {
                let mut dhb = dhb_rows[i].clone();
                for (a, b) in dhb.iter_mut().zip(&carry_b[i]) {
                    *a += b;
                }
                let (dxb, dhprev_b) = gru_backward(&p.gru_b, &gb[i], &dhb, &mut g_gru_b);
                carry_b[i] = dhprev_b;
                d_b_in[t][i] = dxb;

                let mut dhf = dhf_rows[i].clone();
                for (a, b) in dhf.iter_mut().zip(&carry_f[i]) {
                    *a += b;
                }
                let (dxf, dhprev_f) = gru_backward(&p.gru_f, &gf[i], &dhf, &mut g_gru_f);
                carry_f[i] = dhprev_f;
                d_f_in[t][i] = dxf;
            }
        }
        let mut g = Vec::with_capacity(self.param_count());
        for t in [&g_gru_b.w_z, &g_gru_b.u_z, &g_gru_b.b_z, &g_gru_b.w_r, &g_gru_b.u_r, &g_gru_b.b_r, &g_gru_b.w_h, &g_gru_b.u_h, &g_gru_b.b_h] {
            g.extend_from_slice(t.data());
        }
        for t in [&g_gru_f.w_z, &g_gru_f.u_z, &g_gru_f.b_z, &g_gru_f.w_r, &g_gru_f.u_r, &g_gru_f.b_r, &g_gru_f.w_h, &g_gru_f.u_h, &g_gru_f.b_h] {
            g.extend_from_slice(t.data());
        }
        g.extend_from_slice(g_attn_b.w.data());
        g.extend_from_slice(g_attn_f.w.data());
        g.extend_from_slice(g_cls.weight.data());
        g.extend_from_slice(g_cls.bias.data());
        for t in 0..self.steps {
            for i in 0..self.n_obj {
                g.extend_from_slice(&d_b_in[t][i]);
                g.extend_from_slice(&d_f_in[t][i]);
            }
        }
        g
    }
}

#[test]
fn full_head_gradients_match_finite_differences() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(6000 + seed);
        let case = HeadCase {
            n_obj: 3,
            steps: 4,
            b_dim: 4,
            f_dim: 5,
            hb: 6,
            hf: 7,
            labels: (0..4)
                .map(|_| (0..3).map(|_| rng.gen_range(0..2usize)).collect())
                .collect(),
            weights: [0.27, 1.0],
        };
        let theta = rand_vec(&mut rng, case.param_count());
        let analytic = case.analytic(&theta);
        let numeric = finite_diff_grad(|t| case.loss(t), &theta, EPS);
        let err = max_rel_err(&analytic, &numeric, FLOOR);
        assert!(err <= TOL, "seed {seed}: max rel err {err}");
    }
}
