//! Attention critics. Agent `j` embeds its own state-action pair with `g_j`,
//! attends over the other agents' embeddings through the shared `W_q`,
//! `W_k`, `W_v` and feeds `[g_j, e_j]` to its head `f_j`.

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};

use super::params::{AgentParameters, AttentionBlock, AttentionGrad};
use crate::error::{Error, Result};
use crate::nn::{leaky_relu, leaky_relu_grad, softmax, BatchTrace, DenseNet, GradientTape};

/// Which copy of the parameters to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NetSet {
    Online,
    Target,
}

/// Read-only view of every agent's critic plus the shared attention block.
#[derive(Clone, Copy, Debug)]
pub struct CriticView<'a> {
    pub agents: &'a [AgentParameters],
    pub block: &'a AttentionBlock,
    pub set: NetSet,
    /// With `false` every `e_j` is zero (independent critics).
    pub attention: bool,
}

impl<'a> CriticView<'a> {
    pub fn new(
        agents: &'a [AgentParameters],
        block: &'a AttentionBlock,
        set: NetSet,
        attention: bool,
    ) -> Self {
        CriticView {
            agents,
            block,
            set,
            attention,
        }
    }

    fn embed(&self, j: usize) -> &'a DenseNet {
        match self.set {
            NetSet::Online => &self.agents[j].embed,
            NetSet::Target => &self.agents[j].target_embed,
        }
    }

    fn head(&self, j: usize) -> &'a DenseNet {
        match self.set {
            NetSet::Online => &self.agents[j].head,
            NetSet::Target => &self.agents[j].target_head,
        }
    }

    fn mats(&self) -> (&'a Array2<f64>, &'a Array2<f64>, &'a Array2<f64>) {
        let b = self.block;
        match self.set {
            NetSet::Online => (&b.w_q, &b.w_k, &b.w_v),
            NetSet::Target => (&b.target_w_q, &b.target_w_k, &b.target_w_v),
        }
    }

    fn attends(&self) -> bool {
        self.attention && self.agents.len() > 1
    }
}

pub fn one_hot(action: usize, count: usize) -> Result<Vec<f64>> {
    if action >= count {
        return Err(Error::Invalid(format!("action {action} outside 0..{count}")));
    }
    let mut v = vec![0.0; count];
    v[action] = 1.0;
    Ok(v)
}

/// `[s, onehot(a)]` rows.
pub(crate) fn embed_input(obs: ArrayView2<f64>, actions: &[usize], count: usize) -> Result<Array2<f64>> {
    if actions.len() != obs.nrows() {
        return Err(Error::shape("batch actions", obs.nrows(), actions.len()));
    }
    let d = obs.ncols();
    let mut x = Array2::zeros((obs.nrows(), d + count));
    x.slice_mut(s![.., ..d]).assign(&obs);
    for (r, a) in actions.iter().enumerate() {
        if *a >= count {
            return Err(Error::Invalid(format!("action {a} outside 0..{count}")));
        }
        x[[r, d + a]] = 1.0;
    }
    Ok(x)
}

/// Embedding `g_j(s_j, a_j)` for a single sample.
pub fn embed(agent: &AgentParameters, obs: &[f64], action: usize) -> Result<Vec<f64>> {
    let mut x = obs.to_vec();
    if obs.len() != agent.obs_dim() {
        return Err(Error::shape("embedding state", agent.obs_dim(), obs.len()));
    }
    x.extend(one_hot(action, agent.action_count())?);
    agent.embed.forward(&x)
}

fn matvec(m: &Array2<f64>, v: &[f64]) -> Vec<f64> {
    m.rows()
        .into_iter()
        .map(|r| r.iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Attention of `focus` over every other agent, in agent order. Empty for a
/// single agent.
pub fn attention_weights(block: &AttentionBlock, embeddings: &[Vec<f64>], focus: usize) -> Result<Vec<f64>> {
    if focus >= embeddings.len() {
        return Err(Error::shape("attention focus", embeddings.len(), focus));
    }
    for g in embeddings {
        if g.len() != block.dim() {
            return Err(Error::shape("embedding", block.dim(), g.len()));
        }
    }
    if embeddings.len() == 1 {
        return Ok(Vec::new());
    }
    let key = matvec(&block.w_k, &embeddings[focus]);
    let scores: Vec<f64> = embeddings
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != focus)
        .map(|(_, g)| dot(&key, &matvec(&block.w_q, g)))
        .collect();
    softmax(&scores)
}

/// `e_j = sum_i weight_i * LReLU(V_i)`; zero-length `values` give `None`.
pub fn attention_aggregate(values: &[Vec<f64>], weights: &[f64]) -> Result<Option<Vec<f64>>> {
    if values.len() != weights.len() {
        return Err(Error::shape("attention weights", values.len(), weights.len()));
    }
    let Some(first) = values.first() else {
        return Ok(None);
    };
    let mut e = vec![0.0; first.len()];
    for (v, w) in values.iter().zip(weights) {
        if v.len() != e.len() {
            return Err(Error::shape("attention value", e.len(), v.len()));
        }
        for (acc, x) in e.iter_mut().zip(v) {
            *acc += w * leaky_relu(*x);
        }
    }
    Ok(Some(e))
}

/// `Q_j` for every action of `focus`, the other agents' actions fixed.
pub fn critic_q(view: &CriticView, obs: &[Vec<f64>], actions: &[usize], focus: usize) -> Result<Vec<f64>> {
    let n = view.agents.len();
    if obs.len() != n || actions.len() != n {
        return Err(Error::shape("joint input", n, obs.len().min(actions.len())));
    }
    let obs_b: Vec<Array2<f64>> = obs
        .iter()
        .map(|o| Array2::from_shape_vec((1, o.len()), o.clone()).expect("row"))
        .collect();
    let acts_b: Vec<Vec<usize>> = actions.iter().map(|a| vec![*a]).collect();
    let others = others_batch(view, &obs_b, &acts_b)?;
    let q = q_all_actions(view, obs_b[focus].view(), focus, &others)?;
    Ok(q.row(0).to_vec())
}

/// Per-agent queries `W_q g_i` and activated values `LReLU(W_v g_i)`.
pub(crate) struct OthersBatch {
    qm: Vec<Array2<f64>>,
    u: Vec<Array2<f64>>,
}

pub(crate) fn others_batch(
    view: &CriticView,
    obs: &[Array2<f64>],
    actions: &[Vec<usize>],
) -> Result<OthersBatch> {
    let n = view.agents.len();
    if obs.len() != n || actions.len() != n {
        return Err(Error::shape("joint batch", n, obs.len()));
    }
    let (w_q, _, w_v) = view.mats();
    let mut qm = Vec::with_capacity(n);
    let mut u = Vec::with_capacity(n);
    if view.attends() {
        for i in 0..n {
            let x = embed_input(obs[i].view(), &actions[i], view.agents[i].action_count())?;
            let g = view.embed(i).predict_batch(x.view())?;
            qm.push(g.dot(&w_q.t()));
            u.push(g.dot(&w_v.t()).mapv(leaky_relu));
        }
    }
    Ok(OthersBatch { qm, u })
}

/// Row-wise attention of keys `k` over the given queries; returns the
/// weights (one column per other agent) and the aggregate.
fn attend(k: &Array2<f64>, qm: &[&Array2<f64>], u: &[&Array2<f64>]) -> (Array2<f64>, Array2<f64>) {
    let b = k.nrows();
    let mut w = Array2::zeros((b, qm.len()));
    for (c, q) in qm.iter().enumerate() {
        w.column_mut(c).assign(&(k * *q).sum_axis(Axis(1)));
    }
    for mut row in w.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    let mut e = Array2::zeros(k.dim());
    for (c, ui) in u.iter().enumerate() {
        e += &(&w.column(c).insert_axis(Axis(1)) * *ui);
    }
    (w, e)
}

/// `Q_j(s, (a_j, a_-j))` for every `a_j`, as a `batch x |A_j|` matrix.
pub(crate) fn q_all_actions(
    view: &CriticView,
    obs_j: ArrayView2<f64>,
    j: usize,
    others: &OthersBatch,
) -> Result<Array2<f64>> {
    let count = view.agents[j].action_count();
    let b = obs_j.nrows();
    let (_, w_k, _) = view.mats();
    let mut out = Array2::zeros((b, count));
    for a in 0..count {
        let x = embed_input(obs_j, &vec![a; b], count)?;
        let g = view.embed(j).predict_batch(x.view())?;
        let e = if view.attends() {
            let k = g.dot(&w_k.t());
            let (qm, u) = other_refs(others, j);
            attend(&k, &qm, &u).1
        } else {
            Array2::zeros(g.dim())
        };
        let h = concatenate![Axis(1), g, e];
        out.column_mut(a)
            .assign(&view.head(j).predict_batch(h.view())?.column(0));
    }
    Ok(out)
}

fn other_refs(others: &OthersBatch, j: usize) -> (Vec<&Array2<f64>>, Vec<&Array2<f64>>) {
    let qm = others
        .qm
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != j)
        .map(|(_, m)| m)
        .collect();
    let u = others
        .u
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != j)
        .map(|(_, m)| m)
        .collect();
    (qm, u)
}

/// Gradients of the joint critic loss.
#[derive(Clone, Debug, PartialEq)]
pub struct CriticGrads {
    pub embeds: Vec<GradientTape>,
    pub heads: Vec<GradientTape>,
    pub attention: AttentionGrad,
}

impl CriticGrads {
    pub fn is_finite(&self) -> bool {
        self.attention.is_finite()
            && self.embeds.iter().all(|t| t.is_finite())
            && self.heads.iter().all(|t| t.is_finite())
    }
}

/// `Q_j` at the taken actions, for every agent.
pub fn critic_values(
    view: &CriticView,
    obs: &[Array2<f64>],
    actions: &[Vec<usize>],
) -> Result<Vec<Array1<f64>>> {
    Ok(forward(view, obs, actions)?.q)
}

struct Forward {
    g_trace: Vec<BatchTrace>,
    qm: Vec<Array2<f64>>,
    k: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    u: Vec<Array2<f64>>,
    /// `w[j]` has one column per other agent (agent order, skipping `j`).
    w: Vec<Array2<f64>>,
    h_trace: Vec<BatchTrace>,
    q: Vec<Array1<f64>>,
}

fn forward(view: &CriticView, obs: &[Array2<f64>], actions: &[Vec<usize>]) -> Result<Forward> {
    let n = view.agents.len();
    if obs.len() != n || actions.len() != n {
        return Err(Error::shape("joint batch", n, obs.len()));
    }
    let (w_q, w_k, w_v) = view.mats();
    let mut g_trace = Vec::with_capacity(n);
    for i in 0..n {
        let x = embed_input(obs[i].view(), &actions[i], view.agents[i].action_count())?;
        g_trace.push(view.embed(i).forward_batch(x.view())?);
    }
    let b = obs[0].nrows();
    let de = view.block.dim();
    let (mut qm, mut k, mut v, mut u, mut w) = (vec![], vec![], vec![], vec![], vec![]);
    let mut e = Vec::with_capacity(n);
    if view.attends() {
        for t in &g_trace {
            qm.push(t.output.dot(&w_q.t()));
            k.push(t.output.dot(&w_k.t()));
            let vi = t.output.dot(&w_v.t());
            u.push(vi.mapv(leaky_relu));
            v.push(vi);
        }
        for j in 0..n {
            let qo: Vec<&Array2<f64>> = (0..n).filter(|i| *i != j).map(|i| &qm[i]).collect();
            let uo: Vec<&Array2<f64>> = (0..n).filter(|i| *i != j).map(|i| &u[i]).collect();
            let (wj, ej) = attend(&k[j], &qo, &uo);
            w.push(wj);
            e.push(ej);
        }
    } else {
        e = vec![Array2::zeros((b, de)); n];
    }
    let mut h_trace = Vec::with_capacity(n);
    let mut q = Vec::with_capacity(n);
    for j in 0..n {
        let h = concatenate![Axis(1), g_trace[j].output, e[j]];
        let t = view.head(j).forward_batch(h.view())?;
        q.push(t.output.column(0).to_owned());
        h_trace.push(t);
    }
    Ok(Forward {
        g_trace,
        qm,
        k,
        v,
        u,
        w,
        h_trace,
        q,
    })
}

/// Joint regression loss `sum_j mean_b (Q_j - y_j)^2` and its gradient with
/// respect to every embedding, head and attention parameter.
pub fn critic_loss(
    view: &CriticView,
    obs: &[Array2<f64>],
    actions: &[Vec<usize>],
    targets: &[Array1<f64>],
) -> Result<(f64, CriticGrads)> {
    let n = view.agents.len();
    if targets.len() != n {
        return Err(Error::shape("critic targets", n, targets.len()));
    }
    let f = forward(view, obs, actions)?;
    let b = obs[0].nrows() as f64;
    let de = view.block.dim();
    let mut loss = 0.0;
    let mut d_g: Vec<Array2<f64>> = Vec::with_capacity(n);
    let mut d_e: Vec<Array2<f64>> = Vec::with_capacity(n);
    let mut heads = Vec::with_capacity(n);
    for j in 0..n {
        if targets[j].len() != f.q[j].len() {
            return Err(Error::shape(
                "critic target batch",
                f.q[j].len(),
                targets[j].len(),
            ));
        }
        let diff = &f.q[j] - &targets[j];
        loss += diff.mapv(|x| x * x).sum() / b;
        let dq = (diff * (2.0 / b)).insert_axis(Axis(1));
        let mut tape = view.head(j).zero_tape();
        let dh = view.head(j).backward_batch(&f.h_trace[j], dq.view(), &mut tape)?;
        heads.push(tape);
        d_g.push(dh.slice(s![.., ..de]).to_owned());
        d_e.push(dh.slice(s![.., de..]).to_owned());
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite("critic loss"));
    }

    let mut attention = AttentionGrad::zeros(de);
    if view.attends() {
        let (w_q, w_k, w_v) = view.mats();
        let mut d_u: Vec<Array2<f64>> = vec![Array2::zeros(d_g[0].dim()); n];
        let mut d_qm = d_u.clone();
        for j in 0..n {
            let others: Vec<usize> = (0..n).filter(|i| *i != j).collect();
            let wj = &f.w[j];
            let mut dw = Array2::zeros(wj.dim());
            for (c, &i) in others.iter().enumerate() {
                dw.column_mut(c).assign(&(&d_e[j] * &f.u[i]).sum_axis(Axis(1)));
                d_u[i] += &(&wj.column(c).insert_axis(Axis(1)) * &d_e[j]);
            }
            let mean = (wj * &dw).sum_axis(Axis(1));
            let dscore = wj * &(&dw - &mean.insert_axis(Axis(1)));
            let mut dk = Array2::zeros(f.k[j].dim());
            for (c, &i) in others.iter().enumerate() {
                let ds = dscore.column(c).insert_axis(Axis(1));
                dk += &(&ds * &f.qm[i]);
                d_qm[i] += &(&ds * &f.k[j]);
            }
            let g = &f.g_trace[j].output;
            attention.w_k += &dk.t().dot(g);
            d_g[j] += &dk.dot(w_k);
        }
        for i in 0..n {
            let g = &f.g_trace[i].output;
            let mut dv = d_u[i].clone();
            dv.zip_mut_with(&f.v[i], |d, x| *d *= leaky_relu_grad(*x));
            attention.w_v += &dv.t().dot(g);
            attention.w_q += &d_qm[i].t().dot(g);
            d_g[i] += &dv.dot(w_v);
            d_g[i] += &d_qm[i].dot(w_q);
        }
    }

    let mut embeds = Vec::with_capacity(n);
    for i in 0..n {
        let mut tape = view.embed(i).zero_tape();
        view.embed(i)
            .backward_batch(&f.g_trace[i], d_g[i].view(), &mut tape)?;
        embeds.push(tape);
    }
    Ok((
        loss,
        CriticGrads {
            embeds,
            heads,
            attention,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::madrl::params::Hyperparameters;
    use crate::nn::ParamSet;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small(n: usize, seed: u64) -> (Vec<AgentParameters>, AttentionBlock, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hp = Hyperparameters {
            hidden: vec![8],
            embed_dim: 4,
            ..Hyperparameters::default()
        };
        let agents = (0..n)
            .map(|j| AgentParameters::new(3 + j, 2, &hp, &mut rng).unwrap())
            .collect();
        let block = AttentionBlock::new(4, 1e-3, &mut rng);
        (agents, block, rng)
    }

    fn batch(
        agents: &[AgentParameters],
        b: usize,
        rng: &mut ChaCha8Rng,
    ) -> (Vec<Array2<f64>>, Vec<Vec<usize>>) {
        let obs = agents
            .iter()
            .map(|a| Array2::from_shape_fn((b, a.obs_dim()), |_| rng.gen_range(-1.0..1.0)))
            .collect();
        let acts = agents
            .iter()
            .map(|_| (0..b).map(|_| rng.gen_range(0..2)).collect())
            .collect();
        (obs, acts)
    }

    #[test]
    fn two_agents_single_weight_is_one() {
        let (_, block, mut rng) = small(2, 1);
        let g: Vec<Vec<f64>> = (0..2)
            .map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        assert_eq!(attention_weights(&block, &g, 0).unwrap(), vec![1.0]);
    }

    #[test]
    fn identical_others_split_evenly() {
        let (_, block, _) = small(3, 2);
        let g = vec![
            vec![0.3, -0.2, 0.5, 0.1],
            vec![1.0, 0.0, -1.0, 0.5],
            vec![1.0, 0.0, -1.0, 0.5],
        ];
        let w = attention_weights(&block, &g, 0).unwrap();
        assert!((w[0] - 0.5).abs() < 1e-15 && (w[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn aggregate_examples() {
        let e = attention_aggregate(&[vec![0.5, 2.0]], &[1.0]).unwrap().unwrap();
        assert_eq!(e, vec![0.5, 2.0]);
        let e = attention_aggregate(&[vec![-1.0]], &[1.0]).unwrap().unwrap();
        assert!((e[0] + 0.01).abs() < 1e-15);
        let e = attention_aggregate(&[vec![1.0, -2.0], vec![3.0, 4.0]], &[0.25, 0.75])
            .unwrap()
            .unwrap();
        assert!((e[0] - (0.25 + 2.25)).abs() < 1e-12);
        assert!((e[1] - (0.25 * -0.02 + 3.0)).abs() < 1e-12);
        assert_eq!(attention_aggregate(&[], &[]).unwrap(), None);
    }

    #[test]
    fn batched_matches_single_sample() {
        let (agents, block, mut rng) = small(3, 3);
        let view = CriticView::new(&agents, &block, NetSet::Online, true);
        let (obs, acts) = batch(&agents, 5, &mut rng);
        let q = critic_values(&view, &obs, &acts).unwrap();
        for r in 0..5 {
            let o: Vec<Vec<f64>> = obs.iter().map(|m| m.row(r).to_vec()).collect();
            let a: Vec<usize> = acts.iter().map(|v| v[r]).collect();
            for j in 0..3 {
                let all = critic_q(&view, &o, &a, j).unwrap();
                assert!((all[a[j]] - q[j][r]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn loss_gradient_matches_differences() {
        let (mut agents, mut block, mut rng) = small(3, 4);
        let (obs, acts) = batch(&agents, 4, &mut rng);
        let targets: Vec<Array1<f64>> = (0..3)
            .map(|_| Array1::from_shape_fn(4, |_| rng.gen_range(-1.0..1.0)))
            .collect();
        let (_, grads) = critic_loss(
            &CriticView::new(&agents, &block, NetSet::Online, true),
            &obs,
            &acts,
            &targets,
        )
        .unwrap();
        let h = 1e-5;
        let eval = |agents: &[AgentParameters], block: &AttentionBlock| {
            critic_loss(
                &CriticView::new(agents, block, NetSet::Online, true),
                &obs,
                &acts,
                &targets,
            )
            .unwrap()
            .0
        };
        let analytic: Vec<f64> = grads.attention.slices().concat();
        let mut k = 0;
        for s in 0..3 {
            for idx in 0..16 {
                let orig = block.param_slices()[s][idx];
                block.param_slices_mut()[s][idx] = orig + h;
                let up = eval(&agents, &block);
                block.param_slices_mut()[s][idx] = orig - h;
                let dn = eval(&agents, &block);
                block.param_slices_mut()[s][idx] = orig;
                let fd = (up - dn) / (2.0 * h);
                assert!((fd - analytic[k]).abs() <= 1e-4 * fd.abs().max(analytic[k].abs()).max(1e-6));
                k += 1;
            }
        }
        let analytic: Vec<f64> = grads.embeds[1].slices().concat();
        let slots: Vec<usize> = agents[1].embed.param_slices().iter().map(|s| s.len()).collect();
        let mut k = 0;
        for (s, len) in slots.iter().enumerate() {
            for idx in 0..*len {
                let orig = agents[1].embed.param_slices()[s][idx];
                agents[1].embed.param_slices_mut()[s][idx] = orig + h;
                let up = eval(&agents, &block);
                agents[1].embed.param_slices_mut()[s][idx] = orig - h;
                let dn = eval(&agents, &block);
                agents[1].embed.param_slices_mut()[s][idx] = orig;
                let fd = (up - dn) / (2.0 * h);
                assert!((fd - analytic[k]).abs() <= 1e-4 * fd.abs().max(analytic[k].abs()).max(1e-6));
                k += 1;
            }
        }
    }

    #[test]
    fn no_attention_means_zero_context() {
        let (agents, block, mut rng) = small(2, 5);
        let (obs, acts) = batch(&agents, 3, &mut rng);
        let view = CriticView::new(&agents, &block, NetSet::Online, false);
        let q = critic_values(&view, &obs, &acts).unwrap();
        for r in 0..3 {
            let mut x = obs[0].row(r).to_vec();
            x.extend(one_hot(acts[0][r], 2).unwrap());
            let mut h = agents[0].embed.forward(&x).unwrap();
            h.extend(vec![0.0; 4]);
            assert_eq!(agents[0].head.forward(&h).unwrap()[0], q[0][r]);
        }
    }
}
