use afg_core::numerics::{gradcheck, Graph, ParamStore, Tensor, Var};
use afg_core::rng::{normal, stream};
use afg_core::Result;

const H: f64 = 1e-5;
const TOL: f64 = 1e-6;

fn random(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = stream(seed, "ops");
    Tensor::from_rows(rows, cols, (0..rows * cols).map(|_| normal(&mut rng)).collect()).unwrap()
}

/// Reduces any matrix to a scalar with fixed random weights, so every
/// element of the output gets a distinct upstream gradient.
fn reduce(g: &mut Graph, x: Var) -> Result<Var> {
    let v = g.value(x);
    let (r, c) = (v.rows(), v.cols());
    let left = g.input(random(1, r, 900 + r as u64));
    let right = g.input(random(c, 1, 901 + c as u64));
    let t = g.matmul(left, x)?;
    g.matmul(t, right)
}

fn check<F>(name: &str, shapes: &[(usize, usize)], build: F)
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut store = ParamStore::new();
    let ids: Vec<_> = shapes
        .iter()
        .enumerate()
        .map(|(i, &(r, c))| store.insert(&format!("x{i}"), random(r, c, i as u64 + 1), true).unwrap())
        .collect();
    let report = gradcheck(&mut store, H, |g, s| {
        let vars: Vec<Var> = ids.iter().map(|&id| g.param(s, id)).collect();
        let y = build(g, &vars)?;
        reduce(g, y)
    })
    .unwrap();
    assert!(report.passes(TOL), "{name}: {report}");
}

#[test]
fn matmul_variants() {
    check("matmul", &[(3, 4), (4, 2)], |g, v| g.matmul(v[0], v[1]));
    check("matmul_bt", &[(3, 4), (5, 4)], |g, v| g.matmul_bt(v[0], v[1]));
}

#[test]
fn elementwise() {
    check("add", &[(3, 2), (3, 2)], |g, v| g.add(v[0], v[1]));
    check("add_row", &[(3, 2), (1, 2)], |g, v| g.add_row(v[0], v[1]));
    check("scale", &[(2, 3)], |g, v| Ok(g.scale(v[0], -1.7)));
    check("relu", &[(4, 4)], |g, v| Ok(g.relu(v[0])));
}

#[test]
fn softmax_plain_and_causal() {
    check("softmax", &[(3, 5)], |g, v| g.softmax_rows(v[0], false));
    check("softmax causal", &[(4, 4)], |g, v| g.softmax_rows(v[0], true));
}

#[test]
fn layer_norm_all_inputs() {
    check("layer_norm", &[(3, 6), (1, 6), (1, 6)], |g, v| g.layer_norm(v[0], v[1], v[2]));
}

#[test]
fn structural_ops() {
    check("embedding", &[(5, 3)], |g, v| g.embedding(v[0], &[4, 0, 4, 2]));
    check("concat_rows", &[(2, 3), (1, 3)], |g, v| g.concat_rows(&[v[0], v[1]]));
    check("concat_cols", &[(2, 3), (2, 1)], |g, v| g.concat_cols(&[v[0], v[1]]));
    check("slice_rows", &[(5, 2)], |g, v| g.slice_rows(v[0], 1, 4));
    check("slice_cols", &[(2, 5)], |g, v| g.slice_cols(v[0], 2, 5));
    check("mean_rows", &[(4, 3)], |g, v| g.mean_rows(v[0]));
}

#[test]
fn cross_entropy_sum() {
    check("cross_entropy", &[(4, 6)], |g, v| g.cross_entropy(v[0], &[0, 5, 2, 2]));
}

#[test]
fn attention_block_composite() {
    // softmax(q kᵀ / √d) v, the core of every attention head
    check("attention", &[(3, 4), (5, 4), (5, 4)], |g, v| {
        let s = g.matmul_bt(v[0], v[1])?;
        let s = g.scale(s, 0.5);
        let w = g.softmax_rows(s, false)?;
        g.matmul(w, v[2])
    });
}
