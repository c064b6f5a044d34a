//! Recurrent policy that emits, per V/F level, one candidate-set choice and
//! `K` pattern choices from that set.
//!
//! A single tanh cell runs over the decision sequence. Step `t` reads the
//! embedding of the action taken at `t - 1` (a learned start vector at `t = 0`)
//! and a per-step linear head turns the hidden state into logits. Gradients of
//! the trajectory log-probability are computed by backpropagation through time
//! and used in a REINFORCE update with a moving-average baseline.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::softmax;

/// Shape of the decision sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControllerSpec {
    pub levels: usize,
    pub patterns_per_level: usize,
    /// Member count of every candidate set.
    pub set_sizes: Vec<usize>,
}

impl ControllerSpec {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 {
            return Err(Error::InvalidConfig("need at least one V/F level".into()));
        }
        if self.set_sizes.is_empty() || self.set_sizes.contains(&0) {
            return Err(Error::InvalidConfig(
                "candidate sets must be non-empty".into(),
            ));
        }
        Ok(())
    }

    pub fn steps_per_level(&self) -> usize {
        1 + self.patterns_per_level
    }

    pub fn num_steps(&self) -> usize {
        self.levels * self.steps_per_level()
    }

    fn max_set_size(&self) -> usize {
        self.set_sizes.iter().copied().max().unwrap_or(1)
    }

    /// Head width of step `t`.
    pub fn options(&self, t: usize) -> usize {
        if t.is_multiple_of(self.steps_per_level()) {
            self.set_sizes.len()
        } else {
            self.max_set_size()
        }
    }

    /// Number of selectable options at step `t` given earlier actions.
    pub fn valid_options(&self, t: usize, earlier: &[usize]) -> usize {
        let within = t % self.steps_per_level();
        if within == 0 {
            self.set_sizes.len()
        } else {
            self.set_sizes[earlier[t - within]]
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    Stochastic,
    /// Always the highest-probability option.
    Greedy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub actions: Vec<usize>,
    pub log_prob: f64,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    hidden: usize,
    w_hh: usize,
    b_h: usize,
    start: usize,
    heads: Vec<(usize, usize)>,
    embeddings: Vec<usize>,
    len: usize,
}

impl Layout {
    fn new(spec: &ControllerSpec, hidden: usize) -> Self {
        let mut off = 0;
        let mut take = |n: usize| {
            let at = off;
            off += n;
            at
        };
        let w_hh = take(hidden * hidden);
        let b_h = take(hidden);
        let start = take(hidden);
        let steps = spec.num_steps();
        let heads = (0..steps)
            .map(|t| {
                let n = spec.options(t);
                (take(n * hidden), take(n))
            })
            .collect();
        // Embedding read at step t indexes the action of step t - 1.
        let embeddings = (1..steps)
            .map(|t| take(spec.options(t - 1) * hidden))
            .collect();
        Layout {
            hidden,
            w_hh,
            b_h,
            start,
            heads,
            embeddings,
            len: off,
        }
    }
}

struct ForwardPass {
    hidden: Vec<Vec<f64>>,
    probs: Vec<Vec<f64>>,
    actions: Vec<usize>,
    log_prob: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Controller {
    spec: ControllerSpec,
    layout: Layout,
    params: Vec<f64>,
}

impl Controller {
    /// Recurrent weights start small and random; heads start at zero so the
    /// initial policy is uniform.
    pub fn new(spec: ControllerSpec, hidden: usize, seed: u64) -> Result<Self> {
        spec.validate()?;
        if hidden == 0 {
            return Err(Error::InvalidConfig("hidden width must be >= 1".into()));
        }
        let layout = Layout::new(&spec, hidden);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params: Vec<f64> = (0..layout.len)
            .map(|_| rng.random_range(-0.1..0.1))
            .collect();
        for (u, c) in &layout.heads {
            let n = c - u;
            params[*u..*u + n].fill(0.0);
            let width = n / hidden;
            params[*c..*c + width].fill(0.0);
        }
        Ok(Self {
            spec,
            layout,
            params,
        })
    }

    pub fn spec(&self) -> &ControllerSpec {
        &self.spec
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} parameters for a controller with {}",
                params.len(),
                self.params.len()
            )));
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    fn cell(&self, h_prev: &[f64], t: usize, prev_action: Option<usize>) -> Vec<f64> {
        let hd = self.layout.hidden;
        let p = &self.params;
        let x_off = match prev_action {
            None => self.layout.start,
            Some(a) => self.layout.embeddings[t - 1] + a * hd,
        };
        (0..hd)
            .map(|i| {
                let row = &p[self.layout.w_hh + i * hd..self.layout.w_hh + (i + 1) * hd];
                let rec: f64 = row.iter().zip(h_prev).map(|(w, h)| w * h).sum();
                (rec + p[self.layout.b_h + i] + p[x_off + i]).tanh()
            })
            .collect()
    }

    fn head_probs(&self, h: &[f64], t: usize, valid: usize) -> Vec<f64> {
        let hd = self.layout.hidden;
        let (u, c) = self.layout.heads[t];
        let logits: Vec<f64> = (0..valid)
            .map(|j| {
                let row = &self.params[u + j * hd..u + (j + 1) * hd];
                row.iter().zip(h).map(|(w, x)| w * x).sum::<f64>() + self.params[c + j]
            })
            .collect();
        softmax(&logits)
    }

    fn run<F>(&self, mut choose: F) -> Result<ForwardPass>
    where
        F: FnMut(usize, &[f64]) -> Result<usize>,
    {
        let steps = self.spec.num_steps();
        let mut h = vec![0.0; self.layout.hidden];
        let mut pass = ForwardPass {
            hidden: Vec::with_capacity(steps),
            probs: Vec::with_capacity(steps),
            actions: Vec::with_capacity(steps),
            log_prob: 0.0,
        };
        for t in 0..steps {
            h = self.cell(&h, t, t.checked_sub(1).map(|p| pass.actions[p]));
            let valid = self.spec.valid_options(t, &pass.actions);
            let probs = self.head_probs(&h, t, valid);
            let a = choose(t, &probs)?;
            if a >= valid {
                return Err(Error::InvalidConfig(format!(
                    "action {a} at step {t} exceeds {valid} options"
                )));
            }
            pass.log_prob += probs[a].ln();
            pass.actions.push(a);
            pass.hidden.push(h.clone());
            pass.probs.push(probs);
        }
        Ok(pass)
    }

    pub fn sample(&self, rng: &mut impl Rng, mode: SampleMode) -> Trajectory {
        let pass = self
            .run(|_, probs| {
                Ok(match mode {
                    SampleMode::Greedy => crate::model::argmax(probs),
                    SampleMode::Stochastic => {
                        let u: f64 = rng.random();
                        let mut acc = 0.0;
                        let mut pick = probs.len() - 1;
                        for (i, p) in probs.iter().enumerate() {
                            acc += p;
                            if u < acc {
                                pick = i;
                                break;
                            }
                        }
                        pick
                    }
                })
            })
            .expect("sampled actions are always valid");
        Trajectory {
            actions: pass.actions,
            log_prob: pass.log_prob,
        }
    }

    /// Per-step probability vectors along a fixed action sequence.
    pub fn step_probabilities(&self, actions: &[usize]) -> Result<Vec<Vec<f64>>> {
        self.check_len(actions)?;
        Ok(self.run(|t, _| Ok(actions[t]))?.probs)
    }

    pub fn log_prob(&self, actions: &[usize]) -> Result<f64> {
        self.check_len(actions)?;
        Ok(self.run(|t, _| Ok(actions[t]))?.log_prob)
    }

    fn check_len(&self, actions: &[usize]) -> Result<()> {
        if actions.len() != self.spec.num_steps() {
            return Err(Error::InvalidConfig(format!(
                "{} actions for {} decision steps",
                actions.len(),
                self.spec.num_steps()
            )));
        }
        Ok(())
    }

    /// Log-probability of `actions` and its gradient with respect to every
    /// parameter.
    pub fn log_prob_grad(&self, actions: &[usize]) -> Result<(f64, Vec<f64>)> {
        self.check_len(actions)?;
        let pass = self.run(|t, _| Ok(actions[t]))?;
        let hd = self.layout.hidden;
        let p = &self.params;
        let mut grad = vec![0.0; p.len()];
        let mut dh_next = vec![0.0; hd];
        let zeros = vec![0.0; hd];

        for t in (0..actions.len()).rev() {
            let h = &pass.hidden[t];
            let h_prev = if t == 0 { &zeros } else { &pass.hidden[t - 1] };
            let (u, c) = self.layout.heads[t];
            let mut dh = dh_next.clone();
            for (j, pj) in pass.probs[t].iter().enumerate() {
                let dlogit = if j == actions[t] { 1.0 } else { 0.0 } - pj;
                grad[c + j] += dlogit;
                for k in 0..hd {
                    grad[u + j * hd + k] += dlogit * h[k];
                    dh[k] += dlogit * p[u + j * hd + k];
                }
            }
            let dpre: Vec<f64> = dh
                .iter()
                .zip(h)
                .map(|(d, hv)| d * (1.0 - hv * hv))
                .collect();
            let x_off = if t == 0 {
                self.layout.start
            } else {
                self.layout.embeddings[t - 1] + actions[t - 1] * hd
            };
            for i in 0..hd {
                grad[self.layout.b_h + i] += dpre[i];
                grad[x_off + i] += dpre[i];
                for k in 0..hd {
                    grad[self.layout.w_hh + i * hd + k] += dpre[i] * h_prev[k];
                }
            }
            dh_next = (0..hd)
                .map(|k| {
                    (0..hd)
                        .map(|i| p[self.layout.w_hh + i * hd + k] * dpre[i])
                        .sum()
                })
                .collect();
        }
        Ok((pass.log_prob, grad))
    }

    /// `params += lr * mean_b (R_b - baseline) * grad log pi(a_b)`.
    pub fn reinforce_update(
        &mut self,
        batch: &[(Vec<usize>, f64)],
        baseline: f64,
        learning_rate: f64,
    ) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::InvalidConfig("empty episode batch".into()));
        }
        let mut step = vec![0.0; self.params.len()];
        for (actions, reward) in batch {
            let advantage = reward - baseline;
            if advantage == 0.0 {
                continue;
            }
            let (_, g) = self.log_prob_grad(actions)?;
            for (s, gi) in step.iter_mut().zip(g) {
                *s += advantage * gi;
            }
        }
        let scale = learning_rate / batch.len() as f64;
        for (p, s) in self.params.iter_mut().zip(step) {
            *p += scale * s;
        }
        Ok(())
    }
}

/// Exponential moving average of rewards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub decay: f64,
    pub value: Option<f64>,
}

impl Baseline {
    pub fn new(decay: f64) -> Self {
        Self { decay, value: None }
    }

    /// Current value, seeded by `first` the first time.
    pub fn get_or(&self, first: f64) -> f64 {
        self.value.unwrap_or(first)
    }

    pub fn observe(&mut self, reward: f64) {
        self.value = Some(match self.value {
            None => reward,
            Some(v) => self.decay * v + (1.0 - self.decay) * reward,
        });
    }
}
