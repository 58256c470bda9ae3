//! Finite-difference checks of every trainable operation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use topotensor::autodiff::Var;
use topotensor::contrastive::{combined_loss_var, select_rows, LossWeights};
use topotensor::model::{Model, ModelConfig};
use topotensor::nn::{
    finite_difference_check, Cnn, CnnConfig, Evaluation, Gcn, GcnConfig, GradCheckReport, GraphBatch, Mlp, Mode,
    ParamStore, Session,
};
use topotensor::tensor::{DenseTensor, Ttl, TtlConfig, TtlFormat};
use topotensor::{Graph, Result};

pub const STEP: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-4;
pub const MIN_COORDS: usize = 50;
const SAMPLES: usize = 80;

fn random(shape: &[usize], rng: &mut impl Rng) -> DenseTensor {
    DenseTensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Gradient check of the scalar built by `f` over every parameter it binds.
pub fn check(store: &ParamStore, seed: u64, f: impl Fn(&mut Session<'_>) -> Result<Var>) -> Result<GradCheckReport> {
    let eval = |s: &ParamStore| -> Result<Evaluation> {
        let mut sess = Session::new(s, Mode::Train, 99);
        let loss = f(&mut sess)?;
        Ok(Evaluation {
            value: sess.tape.value(loss).item(),
            grads: sess.gradients(loss)?,
            pattern: sess.tape.relu_pattern(),
        })
    };
    finite_difference_check(eval, store, STEP, SAMPLES, seed)
}

/// Contract `y` against a fixed random tensor so every output entry matters.
fn project(sess: &mut Session<'_>, y: Var, seed: u64) -> Result<Var> {
    let shape = sess.tape.shape(y).to_vec();
    let w = random(&shape, &mut ChaCha8Rng::seed_from_u64(seed));
    let c = sess.constant(w);
    let p = sess.tape.mul(y, c)?;
    Ok(sess.tape.sum_all(p))
}

fn toy_graphs() -> Vec<Graph> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let specs: [(usize, &[(usize, usize)]); 4] = [
        (4, &[(0, 1), (1, 2), (2, 3)]),
        (5, &[(0, 1), (1, 2), (2, 0), (2, 3), (3, 4)]),
        (3, &[(0, 1), (0, 2)]),
        (4, &[(0, 1), (1, 2), (2, 3), (3, 0)]),
    ];
    specs
        .iter()
        .map(|(n, e)| {
            let g = Graph::from_edges(*n, e).unwrap();
            g.with_features(random(&[*n, 3], &mut rng)).unwrap()
        })
        .collect()
}

fn gcn_op() -> Result<GradCheckReport> {
    let gcn = Gcn::new("gcn", 3, GcnConfig { layers: 2, hidden: 5, tau: 2 })?;
    let mut store = ParamStore::new();
    gcn.init(&mut store, &mut ChaCha8Rng::seed_from_u64(1));
    let graphs = toy_graphs();
    let refs: Vec<&Graph> = graphs.iter().collect();
    let batch = GraphBatch::new(&refs, 2)?;
    check(&store, 1, |sess| {
        let out = gcn.forward(sess, &batch)?;
        let s = sess.tape.stack(&out, 1)?;
        project(sess, s, 11)
    })
}

fn cnn_op() -> Result<GradCheckReport> {
    let cfg = CnnConfig {
        channels: vec![3, 4],
        kernel: 3,
        stride: 1,
        head_width: 5,
    };
    let cnn = Cnn::new("cnn", 2, 2, cfg)?;
    let mut store = ParamStore::new();
    cnn.init(&mut store, &mut ChaCha8Rng::seed_from_u64(2));
    let x = random(&[2, 4, 7, 7], &mut ChaCha8Rng::seed_from_u64(3));
    check(&store, 2, |sess| {
        let xv = sess.constant(x.clone());
        let y = cnn.forward(sess, xv)?;
        project(sess, y, 12)
    })
}

fn mlp_op() -> Result<GradCheckReport> {
    let mlp = Mlp::new("mlp", 6, 8, 3, 0.5);
    let mut store = ParamStore::new();
    mlp.init(&mut store, &mut ChaCha8Rng::seed_from_u64(4));
    let x = random(&[5, 6], &mut ChaCha8Rng::seed_from_u64(5));
    check(&store, 3, |sess| {
        let xv = sess.constant(x.clone());
        let logits = mlp.forward(sess, xv)?;
        sess.tape.cross_entropy(logits, std::rc::Rc::new(vec![0, 2, 1, 1, 0]))
    })
}

fn ttl_op(format: TtlFormat) -> Result<GradCheckReport> {
    let cfg = TtlConfig {
        format,
        rank: 3,
        widths: vec![5, 4],
        relu: true,
    };
    let ttl = Ttl::new("ttl", &[3, 4], cfg)?;
    let mut store = ParamStore::new();
    ttl.init(&mut store, &mut ChaCha8Rng::seed_from_u64(6))?;
    store.insert("input", random(&[4, 3, 4], &mut ChaCha8Rng::seed_from_u64(7)));
    check(&store, 4, |sess| {
        let x = sess.param("input")?;
        let y = ttl.forward(sess, x)?;
        project(sess, y, 13)
    })
}

fn nt_xent_op(include_positive: bool) -> Result<GradCheckReport> {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    store.insert("z1", random(&[5, 6], &mut rng));
    store.insert("z2", random(&[5, 6], &mut rng));
    check(&store, 5, |sess| {
        let a = sess.param("z1")?;
        let b = sess.param("z2")?;
        sess.tape.nt_xent(a, b, 0.5, include_positive)
    })
}

fn combined_op() -> Result<GradCheckReport> {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for name in ["g1", "g2", "t1", "t2"] {
        store.insert(name, random(&[4, 4], &mut rng));
    }
    let w = LossWeights::default();
    check(&store, 6, |sess| {
        let (g1, g2, t1, t2) = (sess.param("g1")?, sess.param("g2")?, sess.param("t1")?, sess.param("t2")?);
        let lg = sess.tape.nt_xent(g1, g2, w.zeta, false)?;
        let lt = sess.tape.nt_xent(t1, t2, w.zeta, false)?;
        combined_loss_var(&mut sess.tape, lg, Some(lt), &w)
    })
}

/// The full two-channel pretraining objective on a 4-graph batch.
fn full_loss_op() -> Result<GradCheckReport> {
    let cfg = ModelConfig {
        gcn: GcnConfig { layers: 2, hidden: 4, tau: 1 },
        cnn: CnnConfig {
            channels: vec![2],
            kernel: 3,
            stride: 1,
            head_width: 4,
        },
        ttl: TtlConfig {
            format: TtlFormat::Cp,
            rank: 2,
            widths: vec![4],
            relu: true,
        },
        filtrations: 1,
        use_tda: true,
        use_ttl: true,
        mlp_hidden: 4,
        dropout: 0.0,
    };
    let model = Model::new(cfg, 3, 2)?;
    let mut store = ParamStore::new();
    model.init_encoders(&mut store, &mut ChaCha8Rng::seed_from_u64(11))?;
    let graphs = toy_graphs();
    let views: Vec<&Graph> = graphs.iter().chain(graphs.iter().rev()).collect();
    let batch = GraphBatch::new(&views, 1)?;
    let images = random(&[8, 2, 6, 6], &mut ChaCha8Rng::seed_from_u64(12)).map(f64::abs);
    let w = LossWeights::default();
    check(&store, 7, |sess| {
        let z = model.encode_graph(sess, &batch)?;
        let z1 = select_rows(&mut sess.tape, z, 0, 4)?;
        let z2 = select_rows(&mut sess.tape, z, 4, 4)?;
        let lg = sess.tape.nt_xent(z1, z2, w.zeta, false)?;
        let x = sess.constant(images.clone());
        let t = model.encode_topo(sess, x)?;
        let t1 = select_rows(&mut sess.tape, t, 0, 4)?;
        let t2 = select_rows(&mut sess.tape, t, 4, 4)?;
        let lt = sess.tape.nt_xent(t1, t2, w.zeta, false)?;
        combined_loss_var(&mut sess.tape, lg, Some(lt), &w)
    })
}

/// Every operation with its check report.
pub fn gradient_suite() -> Vec<(&'static str, Result<GradCheckReport>)> {
    vec![
        ("gcn", gcn_op()),
        ("cnn", cnn_op()),
        ("mlp", mlp_op()),
        ("ttl-cp", ttl_op(TtlFormat::Cp)),
        ("ttl-tucker", ttl_op(TtlFormat::Tucker)),
        ("ttl-tt", ttl_op(TtlFormat::Tt)),
        ("ttl-dense", ttl_op(TtlFormat::Dense)),
        ("nt_xent", nt_xent_op(false)),
        ("nt_xent-classic", nt_xent_op(true)),
        ("combined_loss", combined_op()),
        ("full-objective", full_loss_op()),
    ]
}

pub fn passes(r: &GradCheckReport) -> bool {
    r.checked >= MIN_COORDS && r.max_rel_error < TOLERANCE
}
