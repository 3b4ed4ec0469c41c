//! Finite-difference oracle for the reverse-mode gradients.
//!
//! Every differentiable op appears in at least one graph here, and the
//! physics-loss-shaped graph exercises the forward-over-reverse path: a
//! loss built from the *time tangent* of the network output must still
//! produce exact weight gradients.

use hamlearn_autodiff::{
    amplitude_input_tangent, amplitude_inputs, Mlp, MlpSpec, NodeId, ParamStore, Tape,
};
use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Central finite differences of `loss` over every parameter, compared
/// against the reverse-mode gradient. Passes when each component agrees
/// within relative 1e-4 (absolute floor 1e-8).
fn assert_grad_matches_fd(store: &ParamStore, loss: impl Fn(&ParamStore) -> (f64, Option<Vec<f64>>)) {
    let (_, grads) = loss(store);
    let grads = grads.expect("reference call must return gradients");
    assert_eq!(grads.len(), store.len());
    let h = 1e-5;
    let mut probe = store.clone();
    for i in 0..store.len() {
        let orig = store.data()[i];
        probe.data_mut()[i] = orig + h;
        let (up, _) = loss(&probe);
        probe.data_mut()[i] = orig - h;
        let (down, _) = loss(&probe);
        probe.data_mut()[i] = orig;
        let fd = (up - down) / (2.0 * h);
        let diff = (grads[i] - fd).abs();
        assert!(
            diff < 1e-8 || diff / fd.abs() < 1e-4,
            "param {i}: reverse {} vs fd {fd} (diff {diff})",
            grads[i]
        );
    }
}

/// A random 2×2 unitary from three angles.
fn random_su2(rng: &mut ChaCha8Rng) -> [Complex64; 4] {
    let theta: f64 = rng.gen_range(0.0..std::f64::consts::PI);
    let (phi, lambda): (f64, f64) = (
        rng.gen_range(0.0..std::f64::consts::TAU),
        rng.gen_range(0.0..std::f64::consts::TAU),
    );
    let (c, s) = ((theta / 2.0).cos(), (theta / 2.0).sin());
    [
        Complex64::new(c, 0.0),
        -Complex64::from_polar(s, lambda),
        Complex64::from_polar(s, phi),
        Complex64::from_polar(c, phi + lambda),
    ]
}

/// Kitchen-sink graph touching every elementwise and structural op; the
/// loss is a smooth scalar of all parameters.
fn kitchen_sink_loss(store: &ParamStore, want_grads: bool) -> (f64, Option<Vec<f64>>) {
    let mut tape = Tape::new();
    let w = tape.param(store, 0, 2, 3);
    let b = tape.param(store, 6, 1, 3);
    let s = tape.scalar_param(store, 9);

    let x = tape.input(
        Array2::from_shape_vec((4, 2), vec![0.3, -0.5, 0.8, 0.1, -0.2, 0.9, 0.4, 0.6]).unwrap(),
        Some(Array2::from_shape_vec((4, 2), vec![1.0, 0.5, -0.3, 0.2, 0.7, -0.1, 0.0, 0.4]).unwrap()),
    );
    let z = tape.matmul(x, w); // [4,3]
    let z = tape.add_row(z, b);
    let h1 = tape.tanh(z);
    let h2 = tape.sigmoid(h1);
    let h3 = tape.exp(h2);
    let h4 = tape.add_const(h3, 0.5); // keep recip/log inputs away from 0
    let h5 = tape.recip(h4);
    let h6 = tape.square(h5);
    let h7 = tape.log_clamped(h4, 1e-12);
    let mixed = tape.mul(h6, h7);
    let scaled = tape.scale(mixed, 0.7);
    let shifted = tape.neg(scaled);
    let konst = Array2::from_shape_fn((4, 3), |(r, c)| 0.2 + 0.1 * (r as f64) - 0.05 * (c as f64));
    let weighted = tape.mul_const(shifted, konst);
    let gathered = tape.gather_rows(weighted, vec![0, 2, 2, 3, 1]);
    let permuted = tape.permute_rows(gathered, vec![4, 0, 3, 1, 2]);
    let summed = tape.sum(permuted);
    let dsum = {
        // Route a tangent-consuming branch through the scalar too.
        let t_branch = tape.tangent_of(h1).unwrap();
        let sq = tape.square(t_branch);
        tape.sum(sq)
    };
    let total = tape.add(summed, dsum);
    let sig = tape.sigmoid(s);
    let loss = tape.scalar_mul(sig, total);
    let loss = tape.sum(loss);
    let value = tape.scalar_value(loss);
    let grads = want_grads.then(|| tape.backward(loss, store.len()).unwrap());
    (value, grads)
}

#[test]
fn kitchen_sink_gradients_match_finite_differences_across_draws() {
    for draw in 0..8 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + draw);
        let mut store = ParamStore::new();
        store.register("w", 2, 3, || rng.gen_range(-0.8..0.8));
        store.register("b", 1, 3, || rng.gen_range(-0.3..0.3));
        store.register("s", 1, 1, || rng.gen_range(-1.0..1.0));
        assert_grad_matches_fd(&store, |st| kitchen_sink_loss(st, true));
    }
}

/// Complex-structured graph: phase permutation, multiplication by i,
/// local unitaries, and per-row modulus — the amplitude pipeline.
fn complex_pipeline_loss(
    store: &ParamStore,
    mlp: &Mlp,
    gates: &[Option<[Complex64; 4]>; 2],
    theta_offset: usize,
) -> (f64, Option<Vec<f64>>) {
    let n = 2;
    let basis: Vec<usize> = (0..4).collect();
    let mut tape = Tape::new();
    let x = tape.input(
        amplitude_inputs(&basis, n, 0.6, 1.5),
        Some(amplitude_input_tangent(basis.len(), n, 1.5)),
    );
    let psi = mlp.forward(&mut tape, store, x).unwrap();
    let dpsi = tape.tangent_of(psi).unwrap();
    let idpsi = tape.mul_by_i(dpsi);

    let psi_v = tape.stop_tangent(psi);
    // "XI" action on 2 qubits: flips the high bit with phase +1.
    let xpsi = tape.phase_permute(
        psi_v,
        vec![2, 3, 0, 1],
        vec![1.0; 4],
        vec![0.0; 4],
    );
    let theta = tape.scalar_param(store, theta_offset);
    let hpsi = tape.scalar_mul(theta, xpsi);
    let residual = tape.sub(idpsi, hpsi);
    let rotated = tape.local_unitary(residual, gates.to_vec());
    let sq = tape.abs_sq_rows(rotated);
    let loss = tape.sum(sq);
    let value = tape.scalar_value(loss);
    let grads = Some(tape.backward(loss, store.len()).unwrap());
    (value, grads)
}

#[test]
fn complex_pipeline_gradients_match_finite_differences_across_draws() {
    for draw in 0..12 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + draw);
        let mut store = ParamStore::new();
        let theta_offset = store.register("theta", 1, 1, || rng.gen_range(-1.0..1.0));
        let mlp = Mlp::register(MlpSpec::new(3, vec![6], 2), &mut store, &mut rng, "net");
        let gates = [Some(random_su2(&mut rng)), Some(random_su2(&mut rng))];
        assert_grad_matches_fd(&store, |st| {
            complex_pipeline_loss(st, &mlp, &gates, theta_offset)
        });
    }
}

#[test]
fn forward_over_reverse_matches_fd_of_the_time_tangent() {
    // L(w) = Σ |dΨ/dt|² with the tangent computed by forward mode; the
    // reverse gradient in w must match finite differences of that same
    // tangent-valued loss.
    for draw in 0..4 {
        let mut rng = ChaCha8Rng::seed_from_u64(900 + draw);
        let mut store = ParamStore::new();
        let mlp = Mlp::register(MlpSpec::new(2, vec![5, 5], 2), &mut store, &mut rng, "net");
        let loss = |st: &ParamStore| -> (f64, Option<Vec<f64>>) {
            let mut tape = Tape::new();
            let x = tape.input(
                amplitude_inputs(&[0, 1], 1, 0.35, 1.0),
                Some(amplitude_input_tangent(2, 1, 1.0)),
            );
            let psi = mlp.forward(&mut tape, st, x).unwrap();
            let dpsi = tape.tangent_of(psi).unwrap();
            let sq = tape.abs_sq_rows(dpsi);
            let l = tape.sum(sq);
            let v = tape.scalar_value(l);
            let g = Some(tape.backward(l, st.len()).unwrap());
            (v, g)
        };
        assert_grad_matches_fd(&store, loss);
    }
}

#[test]
fn gradient_of_scalar_noise_chain_matches_fd() {
    // The reparameterized noise pipeline: q = 0.5 + 0.5·sigmoid(a),
    // p_d = 1 − exp(−(t−t0)·exp(−b)), combined into a smooth scalar.
    let make = |a0: f64, b0: f64| {
        let mut store = ParamStore::new();
        store.register("a", 1, 1, || a0);
        store.register("b", 1, 1, || b0);
        store
    };
    let loss = |st: &ParamStore| -> (f64, Option<Vec<f64>>) {
        let mut tape = Tape::new();
        let a = tape.scalar_param(st, 0);
        let b = tape.scalar_param(st, 1);
        let sig = tape.sigmoid(a);
        let q = {
            let half = tape.scale(sig, 0.5);
            tape.add_const(half, 0.5)
        };
        let inv_mu = {
            let nb = tape.neg(b);
            tape.exp(nb)
        };
        let decay = {
            let scaled = tape.scale(inv_mu, -(1.7 - 0.2));
            tape.exp(scaled)
        };
        let p_d = {
            let neg = tape.neg(decay);
            tape.add_const(neg, 1.0)
        };
        let mixed = tape.mul(q, p_d);
        let lg = tape.log_clamped(mixed, 1e-12);
        let sq = tape.square(lg);
        let l = tape.sum(sq);
        let v = tape.scalar_value(l);
        let g = Some(tape.backward(l, st.len()).unwrap());
        (v, g)
    };
    for (a0, b0) in [(0.3, 0.9), (-1.1, 0.1), (2.0, 1.6), (0.0, 2.3)] {
        assert_grad_matches_fd(&make(a0, b0), loss);
    }
}

#[test]
fn physics_shaped_loss_annihilates_on_an_exact_solution() {
    // For H = θ·Z on one qubit the exact solution in the Z basis is
    // Ψ(t, m) = e^{−iθ E_m t}·c_m with E_0 = θ, E_1 = −θ. Feed those exact
    // amplitudes (bypassing the network) and check the residual vanishes
    // and its θ-gradient matches finite differences.
    let theta0 = 0.8f64;
    let mut store = ParamStore::new();
    store.register("theta", 1, 1, || theta0);

    let loss = |st: &ParamStore| -> (f64, Option<Vec<f64>>) {
        let theta_true = 0.8;
        let t = 0.45;
        let c = [
            Complex64::new(0.6, 0.0) * Complex64::from_polar(1.0, -theta_true * t),
            Complex64::new(0.8, 0.0) * Complex64::from_polar(1.0, theta_true * t),
        ];
        let dc = [
            c[0] * Complex64::new(0.0, -theta_true),
            c[1] * Complex64::new(0.0, theta_true),
        ];
        let mut tape = Tape::new();
        let psi = tape.input(
            Array2::from_shape_vec((2, 2), vec![c[0].re, c[0].im, c[1].re, c[1].im]).unwrap(),
            Some(
                Array2::from_shape_vec((2, 2), vec![dc[0].re, dc[0].im, dc[1].re, dc[1].im])
                    .unwrap(),
            ),
        );
        let dpsi = tape.tangent_of(psi).unwrap();
        let idpsi = tape.mul_by_i(dpsi);
        let psi_v = tape.stop_tangent(psi);
        // Z action: diag(+1, −1).
        let zpsi = tape.phase_permute(psi_v, vec![0, 1], vec![1.0, -1.0], vec![0.0, 0.0]);
        let theta = tape.scalar_param(st, 0);
        let hpsi = tape.scalar_mul(theta, zpsi);
        let residual = tape.sub(idpsi, hpsi);
        let sq = tape.abs_sq_rows(residual);
        let l = tape.sum(sq);
        let v = tape.scalar_value(l);
        let g = Some(tape.backward(l, st.len()).unwrap());
        (v, g)
    };

    let (value, _) = loss(&store);
    assert!(value < 1e-28, "residual at the true θ: {value}");
    assert_grad_matches_fd(&store, loss);

    // At a wrong θ the residual must be positive with the right scale:
    // |(θ_true − θ)·Ψ|² summed = (Δθ)²·‖Ψ‖² = 0.04·1 here.
    let mut wrong = store.clone();
    wrong.data_mut()[0] = 0.6;
    let (value, _) = loss(&wrong);
    assert!((value - 0.04).abs() < 1e-12, "off-θ residual {value}");
}
