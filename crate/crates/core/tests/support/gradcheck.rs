//! Central finite-difference checks of every loss term's analytic gradient
//! in double precision, through small networks.

use candle_core::{DType, Device, Tensor, Var};
use exprgan::datagen::one_hot_matrix;
use exprgan::exprcode::{make_code, CodeLayout, ExpressionLabel};
use exprgan::losses::{
    adv_img_losses, adv_z_losses, identity_loss, pixel_loss, q_loss, scalar, tv_loss, LossWeights,
};
use exprgan::networks::{ArchitectureSpec, ModelBundle, Subnet};
use exprgan::nn::NormMode;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
const BATCH: usize = 4;

struct Lcg(u64);

impl Lcg {
    fn next(&mut self) -> f64 {
        self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (self.0 >> 11) as f64 / (1u64 << 53) as f64
    }

    fn below(&mut self, n: usize) -> usize {
        (self.next() * n as f64) as usize % n
    }
}

struct Toy {
    bundle: ModelBundle,
    x: Tensor,
    g: Tensor,
    prior: Tensor,
    codes: Tensor,
    labels: Tensor,
    classes: Vec<usize>,
    z: Tensor,
}

fn uniform(rng: &mut Lcg, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.next() * 2.0 - 1.0).collect();
    Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
}

fn toy() -> Toy {
    let layout = CodeLayout::new(3, 5).unwrap();
    let spec = ArchitectureSpec::tiny(layout, 3);
    let mut bundle = ModelBundle::with_dtype(spec.clone(), 17, DType::F64).unwrap();
    bundle.feature_net.mark_trained();
    for s in Subnet::ALL {
        let store = bundle.store(s);
        store.set_trainable(true);
        store.set_norm_mode(NormMode::BatchStats);
    }
    let mut rng = Lcg(99);
    let classes: Vec<usize> = (0..BATCH).map(|i| i % 3).collect();
    let mut code_values = Vec::new();
    let mut z_values = Vec::new();
    for &k in &classes {
        let z: Vec<f32> = (0..layout.block).map(|_| rng.next() as f32).collect();
        let code = make_code(ExpressionLabel::new(k, 3).unwrap(), &z, layout).unwrap();
        code_values.extend(code.values().iter().map(|v| *v as f64));
        z_values.extend(z.iter().map(|v| *v as f64));
    }
    Toy {
        x: uniform(&mut rng, &[BATCH, spec.resolution, spec.resolution, 3]),
        g: uniform(&mut rng, &[BATCH, spec.id_dim]),
        prior: uniform(&mut rng, &[BATCH, spec.id_dim]),
        codes: Tensor::from_vec(code_values, (BATCH, layout.len()), &Device::Cpu).unwrap(),
        labels: one_hot_matrix(&classes, 3).unwrap().to_dtype(DType::F64).unwrap(),
        z: Tensor::from_vec(z_values, (BATCH, layout.block), &Device::Cpu).unwrap(),
        classes,
        bundle,
    }
}

/// The first and last parameter (in name order) of a subnetwork.
fn probes(bundle: &ModelBundle, subnet: Subnet) -> Vec<(String, Var)> {
    let mut vars: Vec<(String, Var)> = bundle
        .store(subnet)
        .named_vars()
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    vars.sort_by(|a, b| a.0.cmp(&b.0));
    let last = vars.pop().unwrap();
    vec![vars.swap_remove(0), last]
}

fn perturbed(var: &Var, original: &[f64], index: usize, delta: f64) {
    let mut v = original.to_vec();
    v[index] += delta;
    var.set(&Tensor::from_vec(v, var.shape(), &Device::Cpu).unwrap()).unwrap();
}

/// Relative error of one loss term on one parameter tensor.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub term: String,
    pub param: String,
    pub relative_error: f64,
}

/// Relative error `||a - n|| / max(||a||, ||n||)` between analytic and
/// numeric gradients on sampled coordinates of each probe variable.
fn check(out: &mut Vec<GradCheck>, term: &str, loss: impl Fn() -> Tensor, vars: &[(String, Var)], samples: usize) {
    let grads = loss().backward().unwrap();
    let mut rng = Lcg(term.len() as u64 * 7919);
    for (name, var) in vars {
        let analytic: Vec<f64> = grads
            .get(var.as_tensor())
            .unwrap_or_else(|| panic!("{term}: no gradient reaches {name}"))
            .flatten_all()
            .unwrap()
            .to_vec1()
            .unwrap();
        let original: Vec<f64> = var.as_tensor().flatten_all().unwrap().to_vec1().unwrap();
        let (mut diff, mut norm_a, mut norm_n) = (0.0f64, 0.0f64, 0.0f64);
        for _ in 0..samples {
            let i = rng.below(original.len());
            perturbed(var, &original, i, STEP);
            let plus = scalar(&loss()).unwrap();
            perturbed(var, &original, i, -STEP);
            let minus = scalar(&loss()).unwrap();
            perturbed(var, &original, i, 0.0);
            let numeric = (plus - minus) / (2.0 * STEP);
            diff += (analytic[i] - numeric).powi(2);
            norm_a += analytic[i].powi(2);
            norm_n += numeric.powi(2);
        }
        let scale = norm_a.sqrt().max(norm_n.sqrt());
        assert!(scale > 1e-10, "{term}: vanishing gradient on {name}");
        out.push(GradCheck {
            term: term.to_string(),
            param: name.clone(),
            relative_error: diff.sqrt() / scale,
        });
    }
}

/// Gradient checks for pixel, identity, q, both adversarial pairs, tv and the
/// weighted total.
pub fn run_gradient_checks() -> Vec<GradCheck> {
    let mut out = Vec::new();
    let t = toy();
    let b = &t.bundle;
    let dec = probes(b, Subnet::Decoder);
    let enc = probes(b, Subnet::Encoder);
    let dimg = probes(b, Subnet::ImageDisc);
    let q = probes(b, Subnet::Q);
    let dz = probes(b, Subnet::CodeDisc);
    let fake = || b.decode(&t.g, &t.codes).unwrap();

    check(
        &mut out,
        "pixel",
        || pixel_loss(&b.decode(&b.encode(&t.x).unwrap(), &t.codes).unwrap(), &t.x).unwrap(),
        &[dec.clone(), enc.clone()].concat(),
        6,
    );
    let betas = [1.0, 1.0, 1.0, 1.0, 1.0];
    check(&mut out, "identity", || identity_loss(&b.feature_net, &fake(), &t.x, &betas).unwrap(), &dec, 6);
    check(
        &mut out,
        "q",
        || {
            let features = b.image_disc.forward(&fake(), &t.labels).unwrap().features;
            q_loss(&b.q.predict(&features, &t.classes).unwrap(), &t.z).unwrap()
        },
        // the discriminator head does not feed Q
        &[q.clone(), dimg[..1].to_vec(), dec.clone()].concat(),
        6,
    );
    check(
        &mut out,
        "adv_img_g",
        || {
            let real = b.image_disc.forward(&t.x, &t.labels).unwrap().prob;
            let f = b.image_disc.forward(&fake(), &t.labels).unwrap().prob;
            adv_img_losses(&real, &f).unwrap().1
        },
        &dec,
        6,
    );
    check(
        &mut out,
        "adv_img_d",
        || {
            let real = b.image_disc.forward(&t.x, &t.labels).unwrap().prob;
            let f = b.image_disc.forward(&fake().detach(), &t.labels).unwrap().prob;
            adv_img_losses(&real, &f).unwrap().0
        },
        &dimg,
        6,
    );
    check(
        &mut out,
        "adv_z_g",
        || {
            let p = b.code_disc.forward(&t.prior).unwrap();
            let e = b.code_disc.forward(&b.encode(&t.x).unwrap()).unwrap();
            adv_z_losses(&p, &e).unwrap().1
        },
        &enc,
        6,
    );
    check(
        &mut out,
        "adv_z_d",
        || {
            let p = b.code_disc.forward(&t.prior).unwrap();
            let e = b.code_disc.forward(&b.encode(&t.x).unwrap().detach()).unwrap();
            adv_z_losses(&p, &e).unwrap().0
        },
        &dz,
        6,
    );
    check(&mut out, "tv", || tv_loss(&fake()).unwrap(), &dec, 6);
    let w = LossWeights::paper();
    check(
        &mut out,
        "total",
        || {
            let g = b.encode(&t.x).unwrap();
            let x_hat = b.decode(&g, &t.codes).unwrap();
            let out = b.image_disc.forward(&x_hat, &t.labels).unwrap();
            let mu = b.q.predict(&out.features, &t.classes).unwrap();
            let terms = [
                (pixel_loss(&x_hat, &t.x).unwrap(), 1.0),
                (identity_loss(&b.feature_net, &x_hat, &t.x, &w.layer_betas).unwrap(), w.identity),
                (q_loss(&mu, &t.z).unwrap(), w.q),
                (adv_img_losses(&out.prob, &out.prob).unwrap().1, w.adv_img),
                (adv_z_losses(&b.code_disc.forward(&t.prior).unwrap(), &b.code_disc.forward(&g).unwrap()).unwrap().1, w.adv_z),
                (tv_loss(&x_hat).unwrap(), w.tv),
            ];
            terms
                .into_iter()
                .map(|(l, weight)| (l * weight).unwrap())
                .reduce(|a, b| (a + b).unwrap())
                .unwrap()
        },
        &[dec, enc].concat(),
        6,
    );
    out
}
