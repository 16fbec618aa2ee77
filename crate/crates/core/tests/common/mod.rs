#![allow(dead_code)]

use std::path::PathBuf;

use dglc::tensor::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Directory holding TUDataset folders. `DGLC_DATA_DIR` overrides the
/// repository's `data/`.
pub fn data_dir() -> PathBuf {
    std::env::var_os("DGLC_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data"))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform entries in `[lo, hi)`, pushed away from zero by `gap` so kinked
/// ops stay differentiable under perturbation.
pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64, gap: f64) -> Tensor {
    let len = shape.iter().product();
    let data = (0..len)
        .map(|_| loop {
            let x: f64 = rng.gen_range(lo..hi);
            if x.abs() >= gap {
                break x;
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

pub const FD_STEP: f64 = 1e-5;
pub const FD_RTOL: f64 = 1e-4;
/// Absolute floor for gradients that are exactly zero analytically.
pub const FD_ATOL: f64 = 1e-8;

#[derive(Debug)]
pub struct GradMismatch {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Central finite-difference check of `f` at `inputs`. `f` builds a scalar on
/// the tape from leaves holding the inputs.
pub fn check_gradients(
    inputs: &[Tensor],
    f: &dyn Fn(&mut Tape, &[Var]) -> Var,
) -> Result<(), GradMismatch> {
    let eval = |xs: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.leaf(x.clone())).collect();
        let out = f(&mut tape, &vars);
        tape.value(out).item()
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
    let out = f(&mut tape, &vars);
    tape.backward(out).unwrap();
    for (k, x) in inputs.iter().enumerate() {
        let analytic = tape
            .grad(vars[k])
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(x.shape()));
        for i in 0..x.len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= FD_STEP;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP);
            let a = analytic.data()[i];
            if (a - numeric).abs() > FD_RTOL * a.abs().max(numeric.abs()) + FD_ATOL {
                return Err(GradMismatch {
                    input: k,
                    index: i,
                    analytic: a,
                    numeric,
                });
            }
        }
    }
    Ok(())
}

/// `Σ out ⊙ W` for a fixed random `W`, turning any output into a scalar
/// whose gradient exercises every output entry differently.
pub fn weighted_sum(tape: &mut Tape, out: Var, seed: u64) -> Var {
    let shape = tape.value(out).shape().to_vec();
    let mut r = rng(seed ^ 0x5eed);
    let w = random_tensor(&mut r, &shape, -1.0, 1.0, 0.0);
    let w = tape.constant(w);
    let prod = tape.mul(out, w).unwrap();
    tape.sum(prod)
}

pub type Inputs = Box<dyn Fn(&mut ChaCha8Rng) -> Vec<Tensor>>;
pub type Build = Box<dyn Fn(&mut Tape, &[Var]) -> Var>;

/// One differentiable op under test: random input generator and the scalar
/// function built from it.
pub struct GradCase {
    pub name: &'static str,
    pub inputs: Inputs,
    pub build: Build,
}

fn case(
    name: &'static str,
    inputs: impl Fn(&mut ChaCha8Rng) -> Vec<Tensor> + 'static,
    build: impl Fn(&mut Tape, &[Var]) -> Var + 'static,
) -> GradCase {
    GradCase {
        name,
        inputs: Box::new(inputs),
        build: Box::new(build),
    }
}

fn mat(r: &mut ChaCha8Rng, m: usize, n: usize) -> Tensor {
    random_tensor(r, &[m, n], -1.5, 1.5, 0.0)
}

/// Entries bounded away from zero (kinks and poles).
fn mat_gap(r: &mut ChaCha8Rng, m: usize, n: usize) -> Tensor {
    random_tensor(r, &[m, n], -1.5, 1.5, 0.05)
}

fn positive(r: &mut ChaCha8Rng, m: usize, n: usize) -> Tensor {
    random_tensor(r, &[m, n], 0.2, 2.0, 0.0)
}

/// Every elementwise, reduction and structural op of the tape.
pub fn op_cases() -> Vec<GradCase> {
    vec![
        case(
            "matmul",
            |r| vec![mat(r, 3, 4), mat(r, 4, 2)],
            |t, v| {
                let o = t.matmul(v[0], v[1]).unwrap();
                weighted_sum(t, o, 1)
            },
        ),
        case(
            "add",
            |r| vec![mat(r, 2, 3), mat(r, 2, 3)],
            |t, v| {
                let o = t.add(v[0], v[1]).unwrap();
                weighted_sum(t, o, 2)
            },
        ),
        case(
            "sub",
            |r| vec![mat(r, 2, 3), mat(r, 2, 3)],
            |t, v| {
                let o = t.sub(v[0], v[1]).unwrap();
                weighted_sum(t, o, 3)
            },
        ),
        case(
            "mul",
            |r| vec![mat(r, 3, 2), mat(r, 3, 2)],
            |t, v| {
                let o = t.mul(v[0], v[1]).unwrap();
                weighted_sum(t, o, 4)
            },
        ),
        case(
            "scale",
            |r| vec![mat(r, 2, 2)],
            |t, v| {
                let o = t.scale(v[0], -1.7);
                weighted_sum(t, o, 5)
            },
        ),
        case(
            "add_scalar",
            |r| vec![mat(r, 2, 2)],
            |t, v| {
                let o = t.add_scalar(v[0], 0.3);
                let o = t.square(o);
                weighted_sum(t, o, 6)
            },
        ),
        case(
            "relu",
            |r| vec![mat_gap(r, 3, 3)],
            |t, v| {
                let o = t.relu(v[0]);
                weighted_sum(t, o, 7)
            },
        ),
        case(
            "softplus",
            |r| vec![random_tensor(r, &[3, 3], -8.0, 8.0, 0.0)],
            |t, v| {
                let o = t.softplus(v[0]);
                weighted_sum(t, o, 8)
            },
        ),
        case(
            "log",
            |r| vec![positive(r, 2, 3)],
            |t, v| {
                let o = t.log(v[0]);
                weighted_sum(t, o, 9)
            },
        ),
        case(
            "exp",
            |r| vec![mat(r, 2, 3)],
            |t, v| {
                let o = t.exp(v[0]);
                weighted_sum(t, o, 10)
            },
        ),
        case(
            "square",
            |r| vec![mat(r, 2, 3)],
            |t, v| {
                let o = t.square(v[0]);
                weighted_sum(t, o, 11)
            },
        ),
        case(
            "recip",
            |r| vec![positive(r, 2, 3)],
            |t, v| {
                let o = t.recip(v[0]);
                weighted_sum(t, o, 12)
            },
        ),
        case(
            "clamp_min",
            |r| vec![mat_gap(r, 3, 3)],
            |t, v| {
                let o = t.clamp_min(v[0], 0.0);
                weighted_sum(t, o, 13)
            },
        ),
        case(
            "sum",
            |r| vec![mat(r, 2, 4)],
            |t, v| {
                let sq = t.square(v[0]);
                t.sum(sq)
            },
        ),
        case(
            "mean",
            |r| vec![mat(r, 2, 4)],
            |t, v| {
                let sq = t.square(v[0]);
                t.mean(sq)
            },
        ),
        case(
            "row_sum",
            |r| vec![mat(r, 3, 4)],
            |t, v| {
                let o = t.row_sum(v[0]).unwrap();
                weighted_sum(t, o, 14)
            },
        ),
        case(
            "transpose",
            |r| vec![mat(r, 2, 3)],
            |t, v| {
                let o = t.transpose(v[0]).unwrap();
                weighted_sum(t, o, 15)
            },
        ),
        case(
            "concat_rows",
            |r| vec![mat(r, 2, 3), mat(r, 1, 3)],
            |t, v| {
                let o = t.concat_rows(&[v[0], v[1]]).unwrap();
                weighted_sum(t, o, 16)
            },
        ),
        case(
            "concat_cols",
            |r| vec![mat(r, 2, 3), mat(r, 2, 1)],
            |t, v| {
                let o = t.concat_cols(&[v[0], v[1]]).unwrap();
                weighted_sum(t, o, 17)
            },
        ),
        case(
            "segment_sum",
            |r| vec![mat(r, 5, 3)],
            |t, v| {
                let o = t.segment_sum(v[0], &[0, 2, 0, 1, 2], 3).unwrap();
                weighted_sum(t, o, 18)
            },
        ),
        case(
            "gather_rows",
            |r| vec![mat(r, 3, 2)],
            |t, v| {
                let o = t.gather_rows(v[0], &[2, 0, 2, 1]).unwrap();
                weighted_sum(t, o, 19)
            },
        ),
        case(
            "broadcast_add_row",
            |r| vec![mat(r, 3, 2), mat(r, 1, 2)],
            |t, v| {
                let o = t.broadcast_add_row(v[0], v[1]).unwrap();
                let o = t.square(o);
                weighted_sum(t, o, 20)
            },
        ),
        case(
            "broadcast_mul_col",
            |r| vec![mat(r, 3, 2), mat(r, 3, 1)],
            |t, v| {
                let o = t.broadcast_mul_col(v[0], v[1]).unwrap();
                weighted_sum(t, o, 21)
            },
        ),
        case(
            "sq_dist",
            |r| vec![mat(r, 4, 3), mat(r, 2, 3)],
            |t, v| {
                let o = t.sq_dist(v[0], v[1]).unwrap();
                weighted_sum(t, o, 22)
            },
        ),
    ]
}

/// Runs `case` on `instances` random inputs.
pub fn run_case(c: &GradCase, instances: u64) -> Result<(), String> {
    for i in 0..instances {
        let mut r = rng(1000 + i);
        let inputs = (c.inputs)(&mut r);
        check_gradients(&inputs, &*c.build)
            .map_err(|m| format!("{} instance {i}: {m:?}", c.name))?;
    }
    Ok(())
}

pub mod composite {
    use super::*;
    use dglc::cluster::{kl_loss, target_distribution, ClusterHead};
    use dglc::encoder::{Encoder, GraphBatch};
    use dglc::graph::{FeatureMatrix, Graph};
    use dglc::mi::{js_mi_loss, Discriminator};
    use dglc::tensor::{Bindings, ParamStore};

    pub struct Toy {
        pub store: ParamStore,
        pub encoder: Encoder,
        pub disc: Discriminator,
        pub head: ClusterHead,
        pub batch: GraphBatch,
    }

    /// Three small graphs (2, 3 and 4 nodes) with random features and a
    /// freshly initialized model.
    pub fn toy(seed: u64) -> Toy {
        let mut r = rng(seed);
        let graphs = [
            Graph::new(2, [(0, 1)], None).unwrap(),
            Graph::new(3, [(0, 1), (1, 2)], None).unwrap(),
            Graph::new(4, [(0, 1), (0, 2), (0, 3), (2, 3)], None).unwrap(),
        ];
        let feats: Vec<FeatureMatrix> = graphs
            .iter()
            .map(|g| {
                let t = random_tensor(&mut r, &[g.node_count(), 3], -1.0, 1.0, 0.0);
                FeatureMatrix::new(g.node_count(), 3, t.into_data()).unwrap()
            })
            .collect();
        let batch = GraphBatch::new(
            &graphs.iter().collect::<Vec<_>>(),
            &feats.iter().collect::<Vec<_>>(),
        )
        .unwrap();
        let mut store = ParamStore::new();
        let encoder = Encoder::new(&mut store, 3, 4, 2, &mut r);
        let disc = Discriminator::new(&mut store, 8, 8, &mut r);
        let head = ClusterHead::new(&mut store, (8, 4, 3), 2, &mut r);
        // Zero-initialized biases put ReLU inputs exactly on the kink for
        // rows that were fully clipped upstream; randomize every parameter.
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let shape = store.get(id).shape().to_vec();
            store
                .set(id, random_tensor(&mut r, &shape, -1.0, 1.0, 0.0))
                .unwrap();
        }
        Toy {
            store,
            encoder,
            disc,
            head,
            batch,
        }
    }

    fn params(toy: &Toy) -> Vec<Tensor> {
        toy.store.params().iter().map(|p| p.value.clone()).collect()
    }

    /// `L_r` through encoder and discriminator, gradients w.r.t. all of
    /// their parameters.
    pub fn check_lr(seed: u64) -> Result<(), GradMismatch> {
        let toy = toy(seed);
        let f = |t: &mut Tape, v: &[Var]| {
            let p = Bindings::from_vars(v.to_vec());
            let enc = toy.encoder.forward(t, &p, &toy.batch).unwrap();
            js_mi_loss(t, &p, &toy.disc, &enc).unwrap()
        };
        check_gradients(&params(&toy), &f)
    }

    /// `L_c` through encoder, projector and centers with `P` frozen at the
    /// unperturbed parameters.
    pub fn check_lc(seed: u64) -> Result<(), GradMismatch> {
        let toy = toy(seed);
        let q_of = |t: &mut Tape, p: &Bindings| {
            let enc = toy.encoder.forward(t, p, &toy.batch).unwrap();
            let z = toy.head.project(t, p, enc.graph_repr).unwrap();
            toy.head.assign(t, p, z).unwrap()
        };
        let target = {
            let mut t = Tape::new();
            let p = toy.store.bind_frozen(&mut t);
            let q = q_of(&mut t, &p);
            target_distribution(t.value(q)).unwrap()
        };
        let f = |t: &mut Tape, v: &[Var]| {
            let p = Bindings::from_vars(v.to_vec());
            let q = q_of(t, &p);
            kl_loss(t, &target, q).unwrap()
        };
        check_gradients(&params(&toy), &f)
    }
}
