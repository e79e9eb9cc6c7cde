//! Shared transformer building blocks wired by parameter-name prefix:
//! multi-head attention, feed-forward and layer norm. Initialization and
//! forward stay in one place so every module names its weights the same way.

use rand_chacha::ChaCha8Rng;

use super::params::{ParamStore, TapeBinding};
use crate::tensor::{linear, Mat, Var};

pub const LN_EPS: f64 = 1e-5;

pub fn init_linear(
    store: &mut ParamStore,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    d_in: usize,
    d_out: usize,
    zero: bool,
) {
    // Glorot scaling keeps activations comparable across the mixed widths.
    let std = (2.0 / (d_in + d_out) as f64).sqrt();
    let w = if zero { Mat::zeros(d_in, d_out) } else { Mat::randn(rng, d_in, d_out, std) };
    store.insert(&format!("{prefix}.w"), w, true);
    store.insert(&format!("{prefix}.b"), Mat::zeros(1, d_out), true);
}

pub fn apply_linear<'t>(binding: &TapeBinding<'t, '_>, prefix: &str, x: Var<'t>) -> Var<'t> {
    linear(x, binding.var(&format!("{prefix}.w")), binding.var(&format!("{prefix}.b")))
}

pub fn init_ln(store: &mut ParamStore, prefix: &str, d: usize) {
    store.insert(&format!("{prefix}.g"), Mat::from_fn(1, d, |_, _| 1.0), true);
    store.insert(&format!("{prefix}.b"), Mat::zeros(1, d), true);
}

pub fn apply_ln<'t>(binding: &TapeBinding<'t, '_>, prefix: &str, x: Var<'t>) -> Var<'t> {
    x.layer_norm(
        binding.var(&format!("{prefix}.g")),
        binding.var(&format!("{prefix}.b")),
        LN_EPS,
    )
}

/// Query/key/value/output projections. `zero_out` zero-initializes the
/// output projection, making the attention branch vanish at initialization.
pub fn init_attn(
    store: &mut ParamStore,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    d: usize,
    zero_out: bool,
) {
    init_linear(store, rng, &format!("{prefix}.q"), d, d, false);
    init_linear(store, rng, &format!("{prefix}.k"), d, d, false);
    init_linear(store, rng, &format!("{prefix}.v"), d, d, false);
    init_linear(store, rng, &format!("{prefix}.o"), d, d, zero_out);
}

/// Multi-head attention with `q_in` as queries and `kv_in` as keys and
/// values. Also returns the per-head attention weight matrices.
pub fn mha_with_weights<'t>(
    binding: &TapeBinding<'t, '_>,
    prefix: &str,
    q_in: Var<'t>,
    kv_in: Var<'t>,
    heads: usize,
) -> (Var<'t>, Vec<Var<'t>>) {
    let d = q_in.cols();
    assert_eq!(d % heads, 0, "width {d} not divisible by {heads} heads");
    let dh = d / heads;
    let q = apply_linear(binding, &format!("{prefix}.q"), q_in);
    let k = apply_linear(binding, &format!("{prefix}.k"), kv_in);
    let v = apply_linear(binding, &format!("{prefix}.v"), kv_in);
    let scale = 1.0 / (dh as f64).sqrt();
    let mut head_outputs = Vec::with_capacity(heads);
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let (lo, hi) = (h * dh, (h + 1) * dh);
        let qh = q.slice_cols(lo, hi);
        let kh = k.slice_cols(lo, hi);
        let vh = v.slice_cols(lo, hi);
        let attn = qh.matmul_nt(kh).scale(scale).row_softmax();
        head_outputs.push(attn.matmul(vh));
        weights.push(attn);
    }
    let joined = Var::concat_cols(&head_outputs);
    (apply_linear(binding, &format!("{prefix}.o"), joined), weights)
}

pub fn mha<'t>(
    binding: &TapeBinding<'t, '_>,
    prefix: &str,
    q_in: Var<'t>,
    kv_in: Var<'t>,
    heads: usize,
) -> Var<'t> {
    mha_with_weights(binding, prefix, q_in, kv_in, heads).0
}

/// Two-layer feed-forward with SiLU. `zero_out` zero-initializes the
/// second linear so the branch vanishes at initialization.
pub fn init_ffn(
    store: &mut ParamStore,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    d: usize,
    d_ffn: usize,
    zero_out: bool,
) {
    init_linear(store, rng, &format!("{prefix}.l1"), d, d_ffn, false);
    init_linear(store, rng, &format!("{prefix}.l2"), d_ffn, d, zero_out);
}

pub fn apply_ffn<'t>(binding: &TapeBinding<'t, '_>, prefix: &str, x: Var<'t>) -> Var<'t> {
    let h = apply_linear(binding, &format!("{prefix}.l1"), x).silu();
    apply_linear(binding, &format!("{prefix}.l2"), h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::{fd_grad, max_rel_err};
    use crate::tensor::Tape;
    use rand::SeedableRng;

    #[test]
    fn attention_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        init_attn(&mut store, &mut rng, "a", 8, false);
        let tape = Tape::new();
        let binding = TapeBinding::new(&tape, &store);
        let q = tape.constant(Mat::randn(&mut rng, 5, 8, 1.0));
        let kv = tape.constant(Mat::randn(&mut rng, 3, 8, 1.0));
        let (_, weights) = mha_with_weights(&binding, "a", q, kv, 2);
        for w in weights {
            let m = w.value();
            for r in 0..m.rows() {
                let sum: f64 = m.row(r).iter().sum();
                assert!((sum - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn single_key_attention_is_uniform_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        init_attn(&mut store, &mut rng, "a", 8, false);
        let tape = Tape::new();
        let binding = TapeBinding::new(&tape, &store);
        let q = tape.constant(Mat::randn(&mut rng, 6, 8, 1.0));
        let kv = tape.constant(Mat::randn(&mut rng, 1, 8, 1.0));
        let (_, weights) = mha_with_weights(&binding, "a", q, kv, 4);
        for w in weights {
            let m = w.value();
            assert_eq!(m.cols(), 1);
            for r in 0..m.rows() {
                assert_eq!(m.get(r, 0), 1.0);
            }
        }
    }

    #[test]
    fn mha_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut store = ParamStore::new();
        init_attn(&mut store, &mut rng, "a", 8, false);
        let q_val = Mat::randn(&mut rng, 4, 8, 1.0);
        let kv_val = Mat::randn(&mut rng, 3, 8, 1.0);
        let loss_of = |store: &ParamStore, q_val: &Mat| -> f64 {
            let tape = Tape::new();
            let binding = TapeBinding::new(&tape, store);
            let q = tape.leaf(q_val.clone());
            let kv = tape.constant(kv_val.clone());
            mha(&binding, "a", q, kv, 2).silu().sum_all().scalar()
        };
        let tape = Tape::new();
        let binding = TapeBinding::new(&tape, &store);
        let q = tape.leaf(q_val.clone());
        let kv = tape.constant(kv_val.clone());
        let loss = mha(&binding, "a", q, kv, 2).silu().sum_all();
        let grads = loss.backward();
        // Input gradient.
        let fd_q = fd_grad(&q_val, |m| loss_of(&store, m), 1e-6);
        assert!(max_rel_err(grads.get(q).unwrap(), &fd_q, 1e-8) < 1e-5);
        // One weight gradient through the store path.
        let wq_var = binding.var("a.q.w");
        let fd_wq = fd_grad(store.get("a.q.w"), |m| {
            let mut s2 = store.clone();
            s2.set_value("a.q.w", m.clone());
            loss_of(&s2, &q_val)
        }, 1e-6);
        assert!(max_rel_err(grads.get(wq_var).unwrap(), &fd_wq, 1e-8) < 1e-5);
    }
}
