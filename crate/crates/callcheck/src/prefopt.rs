//! Preference-optimization numerics on a tabular toy model: DPO and KTO
//! losses, their exact per-logit gradients, and a desk-scale demonstration
//! of why near-identical preference pairs starve DPO of gradient while KTO
//! still pushes the corrected token up.
//!
//! The model is autoregressive over a finite vocabulary with one logit row
//! per exact context (prompt ⧺ generated prefix), so every gradient below
//! is closed-form rather than approximate:
//!
//! ```text
//! π_θ(t | ctx) = softmax(g[ctx])_t,   log π_θ(y|x) = Σ_k log π_θ(t_k | x ⧺ y^{<k})
//! r_θ(x, y)    = log π_θ(y|x) − log π_ref(y|x)
//!
//! DPO:  L = −log σ(β·r_w − β·r_l)
//! KTO:  L = λ_w(1 − σ(c_w)) + λ_l(1 − σ(−c_l)),  c_• = β(r_• − z0)
//!
//! ∂L_KTO/∂g[ctx][j] = −A_w Σ_{k: ctx_k^w=ctx}(1[j=t_k^w] − s_j)
//!                     +A_l Σ_{k: ctx_k^l=ctx}(1[j=t_k^l] − s_j)
//! with true derivative weights  A_• = λ_•·β·σ(c_•)·σ(−c_•).
//! ```
//!
//! The asymmetric weights reported alongside the gradient follow the form
//! `a_• = λ_•·σ(c_•)·σ(1−c_•)` — note `σ(1−c)`, not the `1−σ(c)` a plain
//! sigmoid derivative gives. That printed form is what [`GradientReport`]
//! carries (and what the sign-claim analysis conditions on), while the
//! gradient table itself uses the true weights so that finite differences
//! agree to numerical precision. For a pair differing at exactly one index
//! `i` the per-position split is:
//!
//! ```text
//! k < i (shared context, shared token): (A_l − A_w)·(1[j=t_k] − s_j)
//! k = i (shared context):  −A_w(1[j=t_w] − s_j) + A_l(1[j=t_l] − s_j)
//! k > i (contexts diverge): −A_w(1[j=t_k^w] − s_j^w)  and  +A_l(1[j=t_k^l] − s_j^l)
//! ```
//!
//! At `k = i`, the slot of the correct token gets `−A_w(1 − s) − A_l·s`,
//! which is strictly negative — descent always raises that logit — whereas
//! the DPO coefficient multiplies the *difference* of the two sequences'
//! score gradients, which nearly cancels when the sequences nearly agree.

use std::collections::BTreeMap;
use std::fmt;
use std::io;

use num_traits::{Float, FromPrimitive};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Scalar bound for every numeric routine in this module: IEEE float
/// behaviour plus conversions and formatting.
pub trait Real:
    Float + FromPrimitive + fmt::Debug + fmt::Display + std::iter::Sum + 'static
{
}
impl<T> Real for T where
    T: Float + FromPrimitive + fmt::Debug + fmt::Display + std::iter::Sum + 'static
{
}

/// Token id in the toy vocabulary.
pub type Token = u32;
/// Context key: prompt tokens followed by the generated prefix.
pub type ContextKey = Vec<Token>;
/// Per-logit gradient table, shaped like [`ToyModel::logits`].
pub type GradTable<T> = BTreeMap<ContextKey, Vec<T>>;

/// Errors from the preference-optimization routines.
#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum PrefError {
    /// A sequence token does not index into the vocabulary.
    #[error("token {token} out of range for vocabulary of {vocab}")]
    TokenOutOfRange {
        /// The offending token.
        token: Token,
        /// The vocabulary size.
        vocab: usize,
    },
    /// The pair does not differ at exactly one position.
    #[error("pair does not differ at exactly one index")]
    PairNotMinimal,
    /// Training produced a non-finite loss.
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss {
        /// The step at which the loss left the finite range.
        step: usize,
    },
    /// The trainer needs at least one pair.
    #[error("no preference pairs supplied")]
    EmptyPairs,
}

fn c<T: Real>(v: f64) -> T {
    T::from_f64(v).expect("constant representable in scalar type")
}

/// Numerically stable logistic sigmoid.
fn sigmoid<T: Real>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// `log σ(z) = −softplus(−z)`, stable at both tails.
fn log_sigmoid<T: Real>(z: T) -> T {
    -softplus(-z)
}

fn softplus<T: Real>(v: T) -> T {
    if v > T::zero() {
        v + (-v).exp().ln_1p()
    } else {
        v.exp().ln_1p()
    }
}

/// A tabular autoregressive policy: one logit row per exact context.
/// Contexts never stored behave as all-zero rows (a uniform policy).
#[derive(Clone, Debug, PartialEq)]
pub struct ToyModel<T> {
    /// Vocabulary size V; every logit row has this length.
    pub vocab_size: usize,
    /// Nominal maximum generation length K.
    pub max_len: usize,
    /// Logit rows keyed by exact context (prompt ⧺ prefix).
    pub logits: BTreeMap<ContextKey, Vec<T>>,
}

impl<T: Real> ToyModel<T> {
    /// A uniform policy: no stored rows, every context implicit all-zero.
    pub fn uniform(vocab_size: usize, max_len: usize) -> Self {
        ToyModel { vocab_size, max_len, logits: BTreeMap::new() }
    }

    /// The context key for position `prefix.len()` of a generation.
    pub fn context_key(x: &[Token], prefix: &[Token]) -> ContextKey {
        let mut key = Vec::with_capacity(x.len() + prefix.len());
        key.extend_from_slice(x);
        key.extend_from_slice(prefix);
        key
    }

    /// The logit row for a context (zeros when unstored).
    pub fn row(&self, key: &[Token]) -> Vec<T> {
        self.logits
            .get(key)
            .cloned()
            .unwrap_or_else(|| vec![T::zero(); self.vocab_size])
    }

    /// Softmax policy for a context. Output sums to one.
    pub fn policy(&self, key: &[Token]) -> Vec<T> {
        softmax(&self.row(key))
    }

    /// Mutable logit row, materializing zeros on first touch.
    pub fn row_mut(&mut self, key: &[Token]) -> &mut Vec<T> {
        self.logits
            .entry(key.to_vec())
            .or_insert_with(|| vec![T::zero(); self.vocab_size])
    }

    fn check_tokens(&self, tokens: &[Token]) -> Result<(), PrefError> {
        for &t in tokens {
            if t as usize >= self.vocab_size {
                return Err(PrefError::TokenOutOfRange { token: t, vocab: self.vocab_size });
            }
        }
        Ok(())
    }
}

fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().cloned().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&g| (g - max).exp()).collect();
    let sum: T = exps.iter().cloned().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// One preference pair: a prompt with a chosen and a rejected completion.
#[derive(Clone, Debug, Eq, PartialEq)]
pub struct RefPair {
    /// Prompt tokens.
    pub x: Vec<Token>,
    /// Chosen (winning) completion.
    pub y_w: Vec<Token>,
    /// Rejected (losing) completion.
    pub y_l: Vec<Token>,
}

impl RefPair {
    /// Builds a pair, rejecting degenerate ones with equal completions.
    pub fn new(x: Vec<Token>, y_w: Vec<Token>, y_l: Vec<Token>) -> Result<Self, PrefError> {
        if y_w == y_l {
            return Err(PrefError::PairNotMinimal);
        }
        Ok(RefPair { x, y_w, y_l })
    }

    /// The single differing index for equal-length pairs that differ at
    /// exactly one position; `None` otherwise.
    pub fn differing_index(&self) -> Option<usize> {
        if self.y_w.len() != self.y_l.len() {
            return None;
        }
        let mut it = self
            .y_w
            .iter()
            .zip(&self.y_l)
            .enumerate()
            .filter(|(_, (w, l))| w != l);
        match (it.next(), it.next()) {
            (Some((i, _)), None) => Some(i),
            _ => None,
        }
    }
}

/// KTO hyperparameters. `z0` is a constant reference point: it shifts the
/// loss but contributes no gradient.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KtoConfig<T> {
    /// Inverse-temperature β on the log-ratio (must be positive).
    pub beta: T,
    /// Weight of the chosen-side term.
    pub lambda_w: T,
    /// Weight of the rejected-side term.
    pub lambda_l: T,
    /// Constant reference point.
    pub z0: T,
}

impl<T: Real> Default for KtoConfig<T> {
    /// β = 0.1, λ_w = λ_l = 1, z0 = 0.
    fn default() -> Self {
        KtoConfig { beta: c(0.1), lambda_w: T::one(), lambda_l: T::one(), z0: T::zero() }
    }
}

/// Loss, gradient, and the asymmetric-weight diagnostics of one KTO
/// evaluation.
#[derive(Clone, Debug)]
pub struct GradientReport<T> {
    /// The loss value.
    pub loss: T,
    /// Exact per-logit gradient (true derivative weights).
    pub grad: GradTable<T>,
    /// Chosen-side asymmetric weight in the printed form λ_w·σ(c_w)·σ(1−c_w).
    pub a_w: T,
    /// Rejected-side asymmetric weight in the printed form λ_l·σ(c_l)·σ(1−c_l).
    pub a_l: T,
    /// β(r_w − z0).
    pub c_w: T,
    /// β(r_l − z0).
    pub c_l: T,
}

/// Sum over positions of the log softmax probability of each token given
/// its exact context.
pub fn seq_logprob<T: Real>(model: &ToyModel<T>, x: &[Token], y: &[Token]) -> Result<T, PrefError> {
    model.check_tokens(x)?;
    model.check_tokens(y)?;
    let mut total = T::zero();
    for k in 0..y.len() {
        let key = ToyModel::<T>::context_key(x, &y[..k]);
        let probs = model.policy(&key);
        total = total + probs[y[k] as usize].ln();
    }
    Ok(total)
}

/// Adds `scale · ∂log π_θ(y|x)/∂g` into `table`.
fn add_logprob_grad<T: Real>(
    model: &ToyModel<T>,
    x: &[Token],
    y: &[Token],
    scale: T,
    table: &mut GradTable<T>,
) {
    for k in 0..y.len() {
        let key = ToyModel::<T>::context_key(x, &y[..k]);
        let probs = model.policy(&key);
        let row = table
            .entry(key)
            .or_insert_with(|| vec![T::zero(); model.vocab_size]);
        let target = y[k] as usize;
        for (j, slot) in row.iter_mut().enumerate() {
            let indicator = if j == target { T::one() } else { T::zero() };
            *slot = *slot + scale * (indicator - probs[j]);
        }
    }
}

fn log_ratios<T: Real>(
    model: &ToyModel<T>,
    reference: &ToyModel<T>,
    pair: &RefPair,
) -> Result<(T, T), PrefError> {
    let r_w = seq_logprob(model, &pair.x, &pair.y_w)? - seq_logprob(reference, &pair.x, &pair.y_w)?;
    let r_l = seq_logprob(model, &pair.x, &pair.y_l)? - seq_logprob(reference, &pair.x, &pair.y_l)?;
    Ok((r_w, r_l))
}

/// DPO loss `−log σ(β·r_w − β·r_l)`.
pub fn dpo_loss<T: Real>(
    model: &ToyModel<T>,
    reference: &ToyModel<T>,
    pair: &RefPair,
    beta: T,
) -> Result<T, PrefError> {
    let (r_w, r_l) = log_ratios(model, reference, pair)?;
    Ok(-log_sigmoid(beta * (r_w - r_l)))
}

/// DPO loss together with its exact per-logit gradient:
/// `∇L = −β·σ(−u)·(∇log π_w − ∇log π_l)` with `u = β(r_w − r_l)`.
pub fn dpo_gradient<T: Real>(
    model: &ToyModel<T>,
    reference: &ToyModel<T>,
    pair: &RefPair,
    beta: T,
) -> Result<(T, GradTable<T>), PrefError> {
    let (r_w, r_l) = log_ratios(model, reference, pair)?;
    let u = beta * (r_w - r_l);
    let coeff = beta * sigmoid(-u);
    let mut grad = GradTable::new();
    add_logprob_grad(model, &pair.x, &pair.y_w, -coeff, &mut grad);
    add_logprob_grad(model, &pair.x, &pair.y_l, coeff, &mut grad);
    Ok((-log_sigmoid(u), grad))
}

/// KTO loss in paired form with its exact gradient and the asymmetric
/// weights. `z0` is treated as a constant throughout.
pub fn kto_loss<T: Real>(
    model: &ToyModel<T>,
    reference: &ToyModel<T>,
    pair: &RefPair,
    cfg: &KtoConfig<T>,
) -> Result<(T, GradientReport<T>), PrefError> {
    let (r_w, r_l) = log_ratios(model, reference, pair)?;
    let c_w = cfg.beta * (r_w - cfg.z0);
    let c_l = cfg.beta * (r_l - cfg.z0);
    let loss = cfg.lambda_w * (T::one() - sigmoid(c_w)) + cfg.lambda_l * (T::one() - sigmoid(-c_l));
    let (aw_true, al_true) = true_weights(cfg, c_w, c_l);
    let mut grad = GradTable::new();
    add_logprob_grad(model, &pair.x, &pair.y_w, -aw_true, &mut grad);
    add_logprob_grad(model, &pair.x, &pair.y_l, al_true, &mut grad);
    let report = GradientReport {
        loss,
        grad,
        a_w: cfg.lambda_w * sigmoid(c_w) * sigmoid(T::one() - c_w),
        a_l: cfg.lambda_l * sigmoid(c_l) * sigmoid(T::one() - c_l),
        c_w,
        c_l,
    };
    Ok((loss, report))
}

/// The weights that actually multiply the score gradients in ∂L/∂g.
fn true_weights<T: Real>(cfg: &KtoConfig<T>, c_w: T, c_l: T) -> (T, T) {
    (
        cfg.lambda_w * cfg.beta * sigmoid(c_w) * sigmoid(-c_w),
        cfg.lambda_l * cfg.beta * sigmoid(c_l) * sigmoid(-c_l),
    )
}

/// KTO gradient of a one-token-difference pair, written as the explicit
/// per-position case split (shared prefix, differing slot, diverged tail).
/// Agrees element-wise with the generic gradient of [`kto_loss`].
pub fn kto_token_gradient<T: Real>(
    model: &ToyModel<T>,
    reference: &ToyModel<T>,
    pair: &RefPair,
    cfg: &KtoConfig<T>,
) -> Result<GradTable<T>, PrefError> {
    let i = pair.differing_index().ok_or(PrefError::PairNotMinimal)?;
    let (r_w, r_l) = log_ratios(model, reference, pair)?;
    let c_w = cfg.beta * (r_w - cfg.z0);
    let c_l = cfg.beta * (r_l - cfg.z0);
    let (a_w, a_l) = true_weights(cfg, c_w, c_l);
    let mut grad = GradTable::new();
    let mut add = |key: ContextKey, target: Token, scale: T, probs: &[T]| {
        let row = grad
            .entry(key)
            .or_insert_with(|| vec![T::zero(); model.vocab_size]);
        for (j, slot) in row.iter_mut().enumerate() {
            let indicator = if j == target as usize { T::one() } else { T::zero() };
            *slot = *slot + scale * (indicator - probs[j]);
        }
    };
    // k < i: contexts and tokens agree, the two sides nearly cancel.
    for k in 0..i {
        let key = ToyModel::<T>::context_key(&pair.x, &pair.y_w[..k]);
        let probs = model.policy(&key);
        add(key, pair.y_w[k], a_l - a_w, &probs);
    }
    // k = i: same context, different target tokens.
    let key = ToyModel::<T>::context_key(&pair.x, &pair.y_w[..i]);
    let probs = model.policy(&key);
    add(key.clone(), pair.y_w[i], -a_w, &probs);
    add(key, pair.y_l[i], a_l, &probs);
    // k > i: contexts have diverged; each side touches its own row.
    for k in (i + 1)..pair.y_w.len() {
        let key_w = ToyModel::<T>::context_key(&pair.x, &pair.y_w[..k]);
        let probs_w = model.policy(&key_w);
        add(key_w, pair.y_w[k], -a_w, &probs_w);
        let key_l = ToyModel::<T>::context_key(&pair.x, &pair.y_l[..k]);
        let probs_l = model.policy(&key_l);
        add(key_l, pair.y_l[k], a_l, &probs_l);
    }
    Ok(grad)
}

/// Which preference loss the toy trainer optimizes.
#[derive(Clone, Copy, Debug, Eq, PartialEq)]
pub enum PrefMethod {
    /// Direct preference optimization.
    Dpo,
    /// Kahneman–Tversky optimization (paired form).
    Kto,
}

impl fmt::Display for PrefMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PrefMethod::Dpo => "dpo",
            PrefMethod::Kto => "kto",
        })
    }
}

/// One trajectory row: the model state before the step's update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryRow<T> {
    /// Step index (0 = initial state).
    pub step: usize,
    /// Mean loss over the batch.
    pub loss: T,
    /// L2 norm of the mean gradient.
    pub grad_norm: T,
    /// Mean chosen-sequence log-probability.
    pub logp_chosen: T,
    /// Mean rejected-sequence log-probability.
    pub logp_rejected: T,
}

/// A completed training run: the trajectory plus both endpoint models.
#[derive(Clone, Debug)]
pub struct TrainRun<T> {
    /// Rows 0..=steps; row `k` describes the model after `k` updates.
    pub trajectory: Vec<TrajectoryRow<T>>,
    /// The frozen reference (also the initial model).
    pub reference: ToyModel<T>,
    /// The trained model.
    pub model: ToyModel<T>,
}

/// Plain gradient descent on the toy model's logits against a frozen
/// reference copy.
///
/// The model is initialized with uniform ±0.05 logit jitter drawn from a
/// seeded generator over the sorted set of contexts the pairs touch, and
/// the reference is an exact copy, so `r_θ = 0` everywhere at step 0. The
/// trajectory has `steps + 1` rows — the state before each update plus the
/// final state — and the whole run is deterministic in `(pairs, method,
/// cfg, steps, learning_rate, seed)`.
pub fn train_toy<T: Real>(
    pairs: &[RefPair],
    method: PrefMethod,
    cfg: &KtoConfig<T>,
    steps: usize,
    learning_rate: T,
    seed: u64,
) -> Result<TrainRun<T>, PrefError> {
    if pairs.is_empty() {
        return Err(PrefError::EmptyPairs);
    }
    let vocab_size = 1 + pairs
        .iter()
        .flat_map(|p| p.x.iter().chain(&p.y_w).chain(&p.y_l))
        .copied()
        .max()
        .unwrap_or(0) as usize;
    let max_len = pairs.iter().map(|p| p.y_w.len().max(p.y_l.len())).max().unwrap_or(0);
    let mut model = ToyModel::<T>::uniform(vocab_size, max_len);
    for pair in pairs {
        for y in [&pair.y_w, &pair.y_l] {
            for k in 0..y.len() {
                model.row_mut(&ToyModel::<T>::context_key(&pair.x, &y[..k]));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for row in model.logits.values_mut() {
        for slot in row.iter_mut() {
            *slot = c(rng.random_range(-0.05..0.05));
        }
    }
    let reference = model.clone();

    let n = c::<T>(pairs.len() as f64);
    let mut trajectory = Vec::with_capacity(steps + 1);
    for step in 0..=steps {
        let mut loss_sum = T::zero();
        let mut grad: GradTable<T> = GradTable::new();
        let mut chosen_sum = T::zero();
        let mut rejected_sum = T::zero();
        for pair in pairs {
            let (loss, pair_grad) = match method {
                PrefMethod::Dpo => dpo_gradient(&model, &reference, pair, cfg.beta)?,
                PrefMethod::Kto => {
                    let (loss, report) = kto_loss(&model, &reference, pair, cfg)?;
                    (loss, report.grad)
                }
            };
            loss_sum = loss_sum + loss;
            for (key, row) in pair_grad {
                let acc = grad
                    .entry(key)
                    .or_insert_with(|| vec![T::zero(); model.vocab_size]);
                for (a, b) in acc.iter_mut().zip(row) {
                    *a = *a + b;
                }
            }
            chosen_sum = chosen_sum + seq_logprob(&model, &pair.x, &pair.y_w)?;
            rejected_sum = rejected_sum + seq_logprob(&model, &pair.x, &pair.y_l)?;
        }
        let loss = loss_sum / n;
        if !loss.is_finite() {
            return Err(PrefError::NonFiniteLoss { step });
        }
        for row in grad.values_mut() {
            for slot in row.iter_mut() {
                *slot = *slot / n;
            }
        }
        trajectory.push(TrajectoryRow {
            step,
            loss,
            grad_norm: table_norm(&grad),
            logp_chosen: chosen_sum / n,
            logp_rejected: rejected_sum / n,
        });
        if step < steps {
            for (key, row) in &grad {
                let target = model.row_mut(key);
                for (slot, g) in target.iter_mut().zip(row) {
                    *slot = *slot - learning_rate * *g;
                }
            }
        }
    }
    Ok(TrainRun { trajectory, reference, model })
}

/// L2 norm over every element of a gradient table.
pub fn table_norm<T: Real>(table: &GradTable<T>) -> T {
    table
        .values()
        .flat_map(|row| row.iter())
        .map(|&g| g * g)
        .sum::<T>()
        .sqrt()
}

/// Writes a trajectory as CSV with header
/// `step,loss,grad_norm,logp_chosen,logp_rejected`.
pub fn write_trajectory_csv<T: Real, W: io::Write>(
    rows: &[TrajectoryRow<T>],
    writer: W,
) -> io::Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["step", "loss", "grad_norm", "logp_chosen", "logp_rejected"])?;
    for row in rows {
        out.write_record([
            row.step.to_string(),
            row.loss.to_string(),
            row.grad_norm.to_string(),
            row.logp_chosen.to_string(),
            row.logp_rejected.to_string(),
        ])?;
    }
    out.flush()
}

/// Parameters of the synthetic pair generators.
#[derive(Clone, Copy, Debug)]
pub struct PairGenConfig {
    /// Number of prompt groups.
    pub groups: usize,
    /// Pairs per group.
    pub per_group: usize,
    /// Vocabulary size.
    pub vocab_size: usize,
    /// Completion length K.
    pub seq_len: usize,
    /// Prompt length.
    pub prompt_len: usize,
    /// Generator seed.
    pub seed: u64,
}

impl Default for PairGenConfig {
    /// 10 groups × 20 pairs over an 8-token vocabulary, completions of
    /// length 6 after 2 prompt tokens.
    fn default() -> Self {
        PairGenConfig { groups: 10, per_group: 20, vocab_size: 8, seq_len: 6, prompt_len: 2, seed: 0 }
    }
}

fn gen_groups(cfg: &PairGenConfig, rng: &mut ChaCha8Rng) -> Vec<(Vec<Token>, Vec<Token>)> {
    (0..cfg.groups)
        .map(|_| {
            let x: Vec<Token> = (0..cfg.prompt_len)
                .map(|_| rng.random_range(0..cfg.vocab_size as Token))
                .collect();
            let draft: Vec<Token> = (0..cfg.seq_len)
                .map(|_| rng.random_range(0..cfg.vocab_size as Token))
                .collect();
            (x, draft)
        })
        .collect()
}

/// A token different from `avoid`, drawn uniformly.
fn other_token(rng: &mut ChaCha8Rng, vocab: usize, avoid: Token) -> Token {
    let t = rng.random_range(0..vocab as Token - 1);
    if t >= avoid {
        t + 1
    } else {
        t
    }
}

/// One-token-difference pairs sharing a per-group draft: the rejected
/// completion is the group's draft verbatim, the chosen one corrects a
/// single seeded position. This is the near-identical regime in which the
/// two DPO score gradients nearly cancel.
pub fn gen_minimal_pairs(cfg: &PairGenConfig) -> Vec<RefPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let groups = gen_groups(cfg, &mut rng);
    let mut pairs = Vec::with_capacity(cfg.groups * cfg.per_group);
    for (x, draft) in &groups {
        for _ in 0..cfg.per_group {
            let i = rng.random_range(0..cfg.seq_len);
            let mut y_w = draft.clone();
            y_w[i] = other_token(&mut rng, cfg.vocab_size, draft[i]);
            pairs.push(RefPair { x: x.clone(), y_w, y_l: draft.clone() });
        }
    }
    pairs
}

/// All-token-difference pairs over the same prompts and drafts as
/// [`gen_minimal_pairs`] (same seed ⇒ same groups): the chosen completion
/// disagrees with the draft at every position, so nothing cancels.
pub fn gen_divergent_pairs(cfg: &PairGenConfig) -> Vec<RefPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let groups = gen_groups(cfg, &mut rng);
    let mut pairs = Vec::with_capacity(cfg.groups * cfg.per_group);
    for (x, draft) in &groups {
        for _ in 0..cfg.per_group {
            let y_w: Vec<Token> = draft
                .iter()
                .map(|&t| other_token(&mut rng, cfg.vocab_size, t))
                .collect();
            pairs.push(RefPair { x: x.clone(), y_w, y_l: draft.clone() });
        }
    }
    pairs
}

/// Mean (over minimal pairs) of the model's logit for the corrected token
/// at each pair's differing position.
pub fn mean_correct_token_logit<T: Real>(
    model: &ToyModel<T>,
    pairs: &[RefPair],
) -> Result<T, PrefError> {
    if pairs.is_empty() {
        return Err(PrefError::EmptyPairs);
    }
    let mut sum = T::zero();
    for pair in pairs {
        let i = pair.differing_index().ok_or(PrefError::PairNotMinimal)?;
        let key = ToyModel::<T>::context_key(&pair.x, &pair.y_w[..i]);
        sum = sum + model.row(&key)[pair.y_w[i] as usize];
    }
    Ok(sum / c(pairs.len() as f64))
}

/// Configuration of the end-to-end failure-mode demonstration.
#[derive(Clone, Copy, Debug)]
pub struct DemoConfig {
    /// Pair-generation parameters (shared by both pair families).
    pub pair_gen: PairGenConfig,
    /// Gradient-descent steps.
    pub steps: usize,
    /// Learning rate.
    pub learning_rate: f64,
    /// Loss hyperparameters (β shared with DPO).
    pub kto: KtoConfig<f64>,
    /// Seed for model initialization.
    pub train_seed: u64,
}

impl Default for DemoConfig {
    /// 200 shared-draft pairs, 300 steps at learning rate 1.0, β = 0.1.
    fn default() -> Self {
        DemoConfig {
            pair_gen: PairGenConfig::default(),
            steps: 300,
            learning_rate: 1.0,
            kto: KtoConfig::default(),
            train_seed: 0,
        }
    }
}

/// The demonstration's measured quantities and verdicts.
#[derive(Clone, Debug)]
pub struct DemoReport {
    /// DPO trajectory on the one-token-difference pairs.
    pub dpo_trajectory: Vec<TrajectoryRow<f64>>,
    /// KTO trajectory on the same pairs.
    pub kto_trajectory: Vec<TrajectoryRow<f64>>,
    /// Mean corrected-token logit before KTO training.
    pub kto_correct_logit_first: f64,
    /// Mean corrected-token logit after KTO training.
    pub kto_correct_logit_last: f64,
    /// DPO initial gradient norm on one-token-difference pairs.
    pub dpo_norm_minimal: f64,
    /// DPO initial gradient norm on all-token-difference pairs.
    pub dpo_norm_divergent: f64,
}

impl DemoReport {
    /// DPO's failure signature: the chosen completions' log-probability is
    /// lower after training than before.
    pub fn dpo_chosen_logprob_fell(&self) -> bool {
        let first = self.dpo_trajectory.first().expect("trajectory non-empty");
        let last = self.dpo_trajectory.last().expect("trajectory non-empty");
        last.logp_chosen < first.logp_chosen
    }

    /// KTO's remedy signature: the corrected token's logit rose.
    pub fn kto_correct_logit_rose(&self) -> bool {
        self.kto_correct_logit_last > self.kto_correct_logit_first
    }

    /// The near-cancellation signature: DPO's initial gradient is smaller
    /// on near-identical pairs than on fully divergent ones.
    pub fn minimal_norm_is_smaller(&self) -> bool {
        self.dpo_norm_minimal < self.dpo_norm_divergent
    }
}

/// Runs the full demonstration: trains DPO and KTO on the same shared-draft
/// minimal pairs and compares DPO's initial gradient against the divergent
/// control.
pub fn run_demo(cfg: &DemoConfig) -> Result<DemoReport, PrefError> {
    let minimal = gen_minimal_pairs(&cfg.pair_gen);
    let divergent = gen_divergent_pairs(&cfg.pair_gen);
    let lr = cfg.learning_rate;
    let dpo = train_toy(&minimal, PrefMethod::Dpo, &cfg.kto, cfg.steps, lr, cfg.train_seed)?;
    let kto = train_toy(&minimal, PrefMethod::Kto, &cfg.kto, cfg.steps, lr, cfg.train_seed)?;
    let divergent_probe = train_toy(&divergent, PrefMethod::Dpo, &cfg.kto, 0, lr, cfg.train_seed)?;
    Ok(DemoReport {
        kto_correct_logit_first: mean_correct_token_logit(&kto.reference, &minimal)?,
        kto_correct_logit_last: mean_correct_token_logit(&kto.model, &minimal)?,
        dpo_norm_minimal: dpo.trajectory[0].grad_norm,
        dpo_norm_divergent: divergent_probe.trajectory[0].grad_norm,
        dpo_trajectory: dpo.trajectory,
        kto_trajectory: kto.trajectory,
    })
}
