//! Finite-difference gradient suite over every differentiable piece.

use fedadapt::adversary::{domain_backprop, DomainClassifier, DomainClassifierConfig};
use fedadapt::federation::objective_backprop;
use fedadapt::losses::{contrastive_loss, cosine_backward, cosine_similarity_cached, da_loss};
use fedadapt::numerics::{
    activation_apply, activation_backward, batchnorm_backward, batchnorm_forward, finite_diff_check, linear_backward,
    linear_forward, Activation,
};
use fedadapt::{FamConfig, FamParams, FamVariant, Matrix, Mode, Temperature};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TOLERANCE: f64 = 1e-4;
const H: f64 = 1e-5;
const FROZEN: Mode = Mode::Train { update_running: false };

#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub max_relative_error: f64,
}

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix<f64> {
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

fn dot(a: &Matrix<f64>, b: &Matrix<f64>) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x * y).sum()
}

fn with(rows: usize, cols: usize, v: &[f64]) -> Matrix<f64> {
    Matrix::from_vec(rows, cols, v.to_vec()).unwrap()
}

struct Suite {
    checks: Vec<Check>,
    rng: ChaCha8Rng,
}

impl Suite {
    fn check(&mut self, name: impl Into<String>, f: impl FnMut(&[f64]) -> f64, analytic: &[f64], point: &[f64]) {
        self.check_with_step(name, f, analytic, point, H);
    }

    fn check_with_step(
        &mut self,
        name: impl Into<String>,
        f: impl FnMut(&[f64]) -> f64,
        analytic: &[f64],
        point: &[f64],
        h: f64,
    ) {
        let report = finite_diff_check(f, analytic, point, h);
        self.checks.push(Check {
            name: name.into(),
            max_relative_error: report.max_relative_error,
        });
    }

    /// Checks only the coordinates in `idx`; the rest stay at `point`.
    fn check_subset(
        &mut self,
        name: impl Into<String>,
        mut f: impl FnMut(&[f64]) -> f64,
        analytic: &[f64],
        point: &[f64],
        idx: &[usize],
    ) {
        let sub_point: Vec<f64> = idx.iter().map(|&i| point[i]).collect();
        let sub_analytic: Vec<f64> = idx.iter().map(|&i| analytic[i]).collect();
        let mut full = point.to_vec();
        let embed = |v: &[f64]| {
            for (&i, &x) in idx.iter().zip(v) {
                full[i] = x;
            }
            f(&full)
        };
        self.check(name, embed, &sub_analytic, &sub_point);
    }

    fn linear(&mut self) {
        let (b, din, dout) = (5, 7, 4);
        let x = random(b, din, &mut self.rng);
        let w = random(din, dout, &mut self.rng);
        let bias = random(1, dout, &mut self.rng);
        let r = random(b, dout, &mut self.rng);
        let g = linear_backward(&x, &w, &r).unwrap();
        let loss = |x: &Matrix<f64>, w: &Matrix<f64>, bias: &Matrix<f64>| dot(&linear_forward(x, w, bias).unwrap(), &r);
        self.check(
            "linear dx",
            |v| loss(&with(b, din, v), &w, &bias),
            g.dx.as_slice(),
            x.as_slice(),
        );
        self.check(
            "linear dW",
            |v| loss(&x, &with(din, dout, v), &bias),
            g.dw.as_slice(),
            w.as_slice(),
        );
        self.check(
            "linear db",
            |v| loss(&x, &w, &with(1, dout, v)),
            g.db.as_slice(),
            bias.as_slice(),
        );
    }

    fn batchnorm(&mut self) {
        let (b, d) = (6, 5);
        let x = random(b, d, &mut self.rng);
        let gamma: Vec<f64> = (0..d).map(|_| self.rng.random_range(0.5..1.5)).collect();
        let beta: Vec<f64> = (0..d).map(|_| self.rng.random_range(-0.5..0.5)).collect();
        let rm: Vec<f64> = (0..d).map(|_| self.rng.random_range(-0.3..0.3)).collect();
        let rv: Vec<f64> = (0..d).map(|_| self.rng.random_range(0.5..2.0)).collect();
        let r = random(b, d, &mut self.rng);
        for (label, mode) in [("train", FROZEN), ("eval", Mode::Eval)] {
            let run = |x: &Matrix<f64>, g: &[f64], be: &[f64]| {
                batchnorm_forward(x, g, be, &rm, &rv, mode, 0.1, 1e-5).unwrap()
            };
            let out = run(&x, &gamma, &beta);
            let grads = batchnorm_backward(&out.cache, &r).unwrap();
            self.check(
                format!("batchnorm {label} dx"),
                |v| dot(&run(&with(b, d, v), &gamma, &beta).out, &r),
                grads.dx.as_slice(),
                x.as_slice(),
            );
            self.check(
                format!("batchnorm {label} dgamma"),
                |v| dot(&run(&x, v, &beta).out, &r),
                &grads.dgamma,
                &gamma,
            );
            self.check(
                format!("batchnorm {label} dbeta"),
                |v| dot(&run(&x, &gamma, v).out, &r),
                &grads.dbeta,
                &beta,
            );
        }
    }

    fn activations(&mut self) {
        let (b, d) = (4, 6);
        for (label, kind) in [
            ("leaky relu", Activation::LEAKY_RELU),
            ("relu", Activation::Relu),
            ("sigmoid", Activation::Sigmoid),
            ("softmax rows", Activation::SoftmaxRows),
        ] {
            let x = random(b, d, &mut self.rng).scale(3.0);
            let r = random(b, d, &mut self.rng);
            let (_, cache) = activation_apply(&x, kind).unwrap();
            let dx = activation_backward(&cache, &r).unwrap();
            self.check(
                label,
                |v| dot(&activation_apply(&with(b, d, v), kind).unwrap().0, &r),
                dx.as_slice(),
                x.as_slice(),
            );
        }
    }

    fn cosine(&mut self) {
        let (b, k, d) = (5, 3, 8);
        let q = random(b, d, &mut self.rng);
        let keys = random(k, d, &mut self.rng);
        let r = random(b, k, &mut self.rng);
        let (_, cache) = cosine_similarity_cached(&q, &keys).unwrap();
        let dq = cosine_backward(&cache, &r).unwrap();
        self.check(
            "cosine similarity",
            |v| dot(&cosine_similarity_cached(&with(b, d, v), &keys).unwrap().0, &r),
            dq.as_slice(),
            q.as_slice(),
        );
    }

    fn contrastive(&mut self) {
        for (b, scale) in [(1, 100.0), (3, 1.0), (6, 100.0), (8, 10.0)] {
            let tau = Temperature::from_logit_scale(scale).unwrap();
            let s = random(b, b, &mut self.rng);
            let (_, ds) = contrastive_loss(&s, tau).unwrap();
            // differentiate in logit units u = s/τ, where central differences are well conditioned
            let logits = s.scale(scale);
            let d_logits = ds.scale(1.0 / scale);
            self.check_with_step(
                format!("contrastive loss B={b} 1/tau={scale}"),
                |v| contrastive_loss(&with(b, b, v).scale(1.0 / scale), tau).unwrap().0,
                d_logits.as_slice(),
                logits.as_slice(),
                1e-3,
            );
        }
    }

    fn domain_loss(&mut self) {
        let n = 8;
        let d: Vec<f64> = (0..n).map(|_| self.rng.random_range(0.05..0.95)).collect();
        let z: Vec<bool> = (0..n).map(|i| i < n / 2).collect();
        let (_, g) = da_loss(&d, &z).unwrap();
        self.check("domain loss", |v| da_loss(v, &z).unwrap().0, &g, &d);
    }

    fn fam(&mut self) {
        let (b, d) = (6, 10);
        for variant in [FamVariant::Standard, FamVariant::Deep] {
            for (label, mode) in [("train", FROZEN), ("eval", Mode::Eval)] {
                let cfg = FamConfig {
                    feature_dim: d,
                    hidden_dim: 7,
                    variant,
                };
                let mut fam = FamParams::<f64>::init(cfg, &mut self.rng).unwrap();
                let mut v0 = fam.to_vector();
                // move running statistics off their trivial initial values
                for seg in fam.config().layout() {
                    if seg.kind.is_batchnorm() && !seg.kind.is_learnable() {
                        for i in seg.range {
                            v0[i] = self.rng.random_range(0.5..1.5);
                        }
                    }
                }
                fam.load_vector(&v0).unwrap();
                let x = random(b, d, &mut self.rng);
                let r = random(b, d, &mut self.rng);
                let (_, cache) = fam.forward_masked(&x, mode).unwrap();
                fam.zero_grad();
                let dx = fam.backward(&cache, &r).unwrap();
                let grads = fam.grad_vector();
                let loss_params = |v: &[f64]| {
                    let mut f = FamParams::from_vector(cfg, v).unwrap();
                    dot(&f.forward_masked(&x, mode).unwrap().0, &r)
                };
                let learnable: Vec<usize> = fam
                    .config()
                    .layout()
                    .into_iter()
                    .filter(|seg| seg.kind.is_learnable())
                    .flat_map(|seg| seg.range)
                    .collect();
                self.check_subset(
                    format!("FAM+mask {variant:?} {label} params"),
                    loss_params,
                    &grads,
                    &v0,
                    &learnable,
                );
                let loss_input = |v: &[f64]| {
                    let mut f = FamParams::from_vector(cfg, &v0).unwrap();
                    dot(&f.forward_masked(&with(b, d, v), mode).unwrap().0, &r)
                };
                self.check(
                    format!("FAM+mask {variant:?} {label} input"),
                    loss_input,
                    dx.as_slice(),
                    x.as_slice(),
                );
            }
        }
    }

    fn small_dc(&mut self, d: usize) -> DomainClassifier<f64> {
        let cfg = DomainClassifierConfig {
            hidden1: 12,
            hidden2: 6,
            zero_head: false,
        };
        DomainClassifier::init(d, cfg, &mut self.rng).unwrap()
    }

    fn discriminator(&mut self) {
        let (n, d) = (8, 9);
        let mut dc = self.small_dc(d);
        let v0 = dc.to_vector();
        let x = random(n, d, &mut self.rng);
        let r: Vec<f64> = (0..n).map(|_| self.rng.random_range(-1.0..1.0)).collect();
        let (_, cache) = dc.forward(&x, FROZEN).unwrap();
        dc.zero_grad();
        let dx = dc.backward(&cache, &r).unwrap();
        let grads = dc.grad_vector();
        let weigh = |p: Vec<f64>| p.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>();
        let template = dc.clone();
        let loss_params = |v: &[f64]| {
            let mut m = template.clone();
            m.load_vector(v).unwrap();
            weigh(m.forward(&x, FROZEN).unwrap().0)
        };
        self.check("discriminator params", loss_params, &grads, &v0);
        let loss_input = |v: &[f64]| weigh(template.clone().forward(&with(n, d, v), FROZEN).unwrap().0);
        self.check("discriminator input", loss_input, dx.as_slice(), x.as_slice());
    }

    fn gradient_reversal(&mut self) {
        let (b, d) = (4, 6);
        let lambda = 0.7;
        let mut dc = self.small_dc(d);
        let ms = random(b, d, &mut self.rng);
        let mt = random(b, d, &mut self.rng);
        let template = dc.clone();
        let step = domain_backprop(&mut dc, &ms, &mt, lambda).unwrap();
        let l_da = |s: &Matrix<f64>, t: &Matrix<f64>| {
            let mut m = template.clone();
            let (p, _) = m.forward(&s.vstack(t).unwrap(), Mode::TRAIN).unwrap();
            let z: Vec<bool> = (0..2 * b).map(|i| i < b).collect();
            da_loss(&p, &z).unwrap().0
        };
        // reversed features receive -λ ∂L_DA/∂I*
        self.check(
            "gradient reversal (source rows)",
            |v| -lambda * l_da(&with(b, d, v), &mt),
            step.d_source.as_slice(),
            ms.as_slice(),
        );
        self.check(
            "gradient reversal (target rows)",
            |v| -lambda * l_da(&ms, &with(b, d, v)),
            step.d_target.as_slice(),
            mt.as_slice(),
        );
    }

    fn full_objective(&mut self) {
        let (b, d, k) = (6, 8, 4);
        let lambda = 0.5;
        let tau = Temperature::from_logit_scale(10.0).unwrap();
        let cfg = FamConfig {
            feature_dim: d,
            hidden_dim: d,
            variant: FamVariant::Standard,
        };
        let mut fam = FamParams::<f64>::init(cfg, &mut self.rng).unwrap();
        let mut dc = self.small_dc(d);
        let source = random(b, d, &mut self.rng);
        let target = random(b, d, &mut self.rng).add(&Matrix::filled(b, d, 0.5)).unwrap();
        let bank = random(k, d, &mut self.rng);
        let labels: Vec<usize> = (0..b).map(|i| i % k).collect();
        let texts = bank.select_rows(&labels);
        let fam0 = fam.to_vector();
        let dc0 = dc.clone();
        fam.zero_grad();
        dc.zero_grad();
        objective_backprop(
            &mut fam,
            &mut dc,
            &source,
            &texts,
            Some(&target),
            lambda,
            tau,
            Mode::TRAIN,
        )
        .unwrap();
        let fam_grad = fam.grad_vector();
        let dc_grad = dc.grad_vector();

        let losses = |fv: &[f64], dcv: &[f64]| -> (f64, f64) {
            let mut f = FamParams::from_vector(cfg, fv).unwrap();
            let mut m = dc0.clone();
            m.load_vector(dcv).unwrap();
            let (ms, _) = f.forward_masked(&source, FROZEN).unwrap();
            let (mt, _) = f.forward_masked(&target, FROZEN).unwrap();
            let (sim, _) = cosine_similarity_cached(&ms, &texts).unwrap();
            let contr = contrastive_loss(&sim, tau).unwrap().0;
            let (p, _) = m.forward(&ms.vstack(&mt).unwrap(), FROZEN).unwrap();
            let z: Vec<bool> = (0..2 * b).map(|i| i < b).collect();
            (contr, da_loss(&p, &z).unwrap().0)
        };
        let dcv0 = dc0.to_vector();
        // adapter descends L_contr − λ L_DA (reversal sign included)
        self.check(
            "objective: adapter (L_contr - lambda L_DA)",
            |v| {
                let (c, a) = losses(v, &dcv0);
                c - lambda * a
            },
            &fam_grad,
            &fam0,
        );
        // discriminator descends L_DA
        self.check(
            "objective: discriminator (L_DA)",
            |v| losses(&fam0, v).1,
            &dc_grad,
            &dcv0,
        );
    }
}

/// Runs every check on seeded random instances.
pub fn run(seed: u64) -> Vec<Check> {
    let mut s = Suite {
        checks: Vec::new(),
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    s.linear();
    s.batchnorm();
    s.activations();
    s.cosine();
    s.contrastive();
    s.domain_loss();
    s.fam();
    s.discriminator();
    s.gradient_reversal();
    s.full_objective();
    s.checks
}
