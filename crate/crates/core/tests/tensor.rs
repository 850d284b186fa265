use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stockformer::tensor::nn::{
    affine, causal_conv, register_affine, register_attention, register_causal_conv,
    scaled_dot_attention,
};
use stockformer::tensor::{
    dilated_causal_conv, gradcheck, AdamState, Graph, ParameterStore, Tensor, Var,
};
use stockformer::Result;

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-4;

/// Entries in ±[0.2, 1.2], away from the kinks of relu and abs.
fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(0.2..1.2);
            if rng.random::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Scalar `Σ y ∘ w` with a fixed non-uniform `w`.
fn project(g: &mut Graph, y: Var) -> Result<Var> {
    let shape = g.shape(y).to_vec();
    let n: usize = shape.iter().product();
    let w = g.constant(Tensor::new(
        shape,
        (0..n).map(|i| ((i + 1) as f64).sin()).collect(),
    )?);
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

fn check(
    name: &str,
    inputs: &[Tensor],
    training: bool,
    f: impl Fn(&mut Graph, &[Var]) -> Result<Var>,
) {
    let r = gradcheck(inputs, EPS, training, |g, v| {
        let y = f(g, v)?;
        project(g, y)
    })
    .unwrap();
    assert!(r.checked > 0);
    assert!(
        r.max_rel_error < TOL,
        "{name}: relative error {}",
        r.max_rel_error
    );
}

#[test]
fn every_primitive_passes_gradient_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut r = |s: &[usize]| random(s, &mut rng);
    check("add", &[r(&[2, 3, 4]), r(&[4])], false, |g, v| {
        g.add(v[0], v[1])
    });
    check("sub", &[r(&[3, 4]), r(&[3, 1])], false, |g, v| {
        g.sub(v[0], v[1])
    });
    check("mul", &[r(&[2, 3]), r(&[2, 3])], false, |g, v| {
        g.mul(v[0], v[1])
    });
    check("scale", &[r(&[5])], false, |g, v| Ok(g.scale(v[0], -1.7)));
    check(
        "matmul shared",
        &[r(&[2, 3, 4]), r(&[4, 5])],
        false,
        |g, v| g.matmul(v[0], v[1]),
    );
    check(
        "matmul batched",
        &[r(&[2, 3, 4]), r(&[2, 4, 2])],
        false,
        |g, v| g.matmul(v[0], v[1]),
    );
    check(
        "matmul sorted",
        &[r(&[2, 3, 4]), r(&[2, 4, 2])],
        false,
        |g, v| g.matmul_sorted(v[0], v[1]),
    );
    check("permute", &[r(&[2, 3, 4])], false, |g, v| {
        g.permute(v[0], &[2, 0, 1])
    });
    check("transpose", &[r(&[2, 3, 4])], false, |g, v| {
        g.transpose(v[0])
    });
    check("reshape", &[r(&[2, 6])], false, |g, v| {
        g.reshape(v[0], &[3, 4])
    });
    check("concat", &[r(&[2, 3]), r(&[2, 2])], false, |g, v| {
        g.concat(&[v[0], v[1]], 1)
    });
    check("slice", &[r(&[4, 3])], false, |g, v| g.slice(v[0], 0, 1, 2));
    check("relu", &[r(&[3, 3])], false, |g, v| Ok(g.relu(v[0])));
    check("abs", &[r(&[3, 3])], false, |g, v| Ok(g.abs(v[0])));
    check("ln", &[r(&[6])], false, |g, v| {
        let a = g.abs(v[0]);
        Ok(g.ln_clamped(a, 1e-12))
    });
    check("softmax", &[r(&[2, 5])], false, |g, v| g.softmax(v[0]));
    check("sum", &[r(&[2, 3])], false, |g, v| {
        let s = g.sum(v[0]);
        let t = g.mul(s, s)?;
        Ok(t)
    });
    check("mean", &[r(&[2, 3])], false, |g, v| {
        let m = g.mean(v[0]);
        g.mul(m, m)
    });
    check("dropout", &[r(&[4, 4])], true, |g, v| g.dropout(v[0], 0.3));
    check("causal shift", &[r(&[2, 5, 3])], false, |g, v| {
        g.causal_shift(v[0], 1, 2)
    });
    check("gather", &[r(&[4, 3])], false, |g, v| {
        g.gather_rows(v[0], &[3, 0, 3, 1])
    });
}

#[test]
fn layers_pass_gradient_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParameterStore::new();
    register_attention(&mut store, "att", 3, &mut rng).unwrap();
    register_causal_conv(&mut store, "conv", 2, 3, &mut rng).unwrap();
    register_affine(&mut store, "fc", 3, 2, &mut rng).unwrap();
    let x = random(&[2, 4, 3], &mut rng);
    for invariant in [false, true] {
        check("attention", std::slice::from_ref(&x), false, |g, v| {
            Ok(scaled_dot_attention(g, &store, "att", v[0], v[0], v[0], invariant)?.output)
        });
    }
    check("causal conv", std::slice::from_ref(&x), false, |g, v| {
        causal_conv(g, &store, "conv", v[0], 1, 2)
    });
    check("affine", &[x], false, |g, v| affine(g, &store, "fc", v[0]));
}

#[test]
fn dropout_in_eval_mode_is_identity() {
    let mut g = Graph::new(false, 9);
    let x = g.constant(random(&[10, 10], &mut ChaCha8Rng::seed_from_u64(1)));
    let y = g.dropout(x, 0.5).unwrap();
    assert_eq!(g.value(x), g.value(y));
}

fn training_run(seed: u64) -> ParameterStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParameterStore::new();
    register_affine(&mut store, "fc", 4, 1, &mut rng).unwrap();
    let x = random(&[8, 4], &mut rng);
    let mut adam = AdamState::new(0.01);
    for step in 0..5 {
        let mut g = Graph::new(true, seed ^ step);
        let xv = g.constant(x.clone());
        let h = g.dropout(xv, 0.25).unwrap();
        let y = affine(&mut g, &store, "fc", h).unwrap();
        let sq = g.mul(y, y).unwrap();
        let loss = g.mean(sq);
        g.backward(loss).unwrap();
        g.write_grads(&mut store);
        adam.step(&mut store);
    }
    store
}

#[test]
fn training_steps_are_bit_reproducible() {
    let bits = |s: &ParameterStore| -> Vec<u64> {
        s.iter()
            .flat_map(|(_, p)| {
                p.value
                    .data()
                    .iter()
                    .map(|v| v.to_bits())
                    .collect::<Vec<_>>()
            })
            .collect()
    };
    assert_eq!(bits(&training_run(4)), bits(&training_run(4)));
    assert_ne!(bits(&training_run(4)), bits(&training_run(5)));
}

proptest! {
    #[test]
    fn causal_conv_ignores_the_future(
        x in prop::collection::vec(-1.0f64..1.0, 2..40),
        taps in prop::collection::vec(-1.0f64..1.0, 1..4),
        dilation in 1usize..4,
        cut in any::<prop::sample::Index>(),
        noise in -5.0f64..5.0,
    ) {
        let t = cut.index(x.len() - 1);
        let base = dilated_causal_conv(&x, &taps, dilation);
        let mut moved = x.clone();
        for v in &mut moved[t + 1..] {
            *v += noise;
        }
        let after = dilated_causal_conv(&moved, &taps, dilation);
        for i in 0..=t {
            prop_assert_eq!(base[i].to_bits(), after[i].to_bits());
        }

        let mut store = ParameterStore::new();
        register_causal_conv(&mut store, "c", taps.len(), 2, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let run = |series: &[f64]| -> Vec<f64> {
            let mut g = Graph::new(false, 0);
            let data: Vec<f64> = series.iter().flat_map(|v| [*v, -v]).collect();
            let xv = g.constant(Tensor::new(vec![series.len(), 2], data).unwrap());
            let y = causal_conv(&mut g, &store, "c", xv, 0, dilation).unwrap();
            g.value(y).data().to_vec()
        };
        let (a, b) = (run(&x), run(&moved));
        for i in 0..2 * (t + 1) {
            prop_assert_eq!(a[i].to_bits(), b[i].to_bits());
        }
    }
}
