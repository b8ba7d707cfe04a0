//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mood_core::algos::losses::{
    asac_actor_loss, awac_actor_loss, critic_loss, td3bc_actor_loss_scaled, value_loss,
};
use mood_core::nets::{Arch, CriticEnsemble, GaussianPolicy, Net};

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;

/// Relative error with a floor on the denominator so components whose true
/// value is ~0 are compared absolutely.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Central differences of `loss` over every coordinate of `params`.
pub fn fd_grad(params: &mut [f64], mut loss: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    (0..params.len())
        .map(|i| {
            let orig = params[i];
            params[i] = orig + FD_STEP;
            let up = loss(params);
            params[i] = orig - FD_STEP;
            let down = loss(params);
            params[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| rel_err(a, n))
        .fold(0.0, f64::max)
}

pub struct Setup {
    pub states: Array2<f64>,
    pub actions: Array2<f64>,
    pub noise: Array2<f64>,
    pub policy: GaussianPolicy,
    pub critics: CriticEnsemble,
    pub value: Net,
    pub adv: Array1<f64>,
    pub y: Array1<f64>,
}

pub const SD: usize = 3;
pub const AD: usize = 2;

/// Random small networks and a batch whose actions sit strictly inside the box.
pub fn setup(seed: u64, modern: bool) -> Setup {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = 6;
    let (actor, critic, value) = if modern {
        (
            Arch::Modern {
                input: SD,
                hidden: 6,
                blocks: 2,
                output: AD,
            },
            Arch::Modern {
                input: SD + AD,
                hidden: 6,
                blocks: 1,
                output: 1,
            },
            Arch::Modern {
                input: SD,
                hidden: 5,
                blocks: 1,
                output: 1,
            },
        )
    } else {
        (
            Arch::Simple {
                dims: vec![SD, 8, 8, AD],
            },
            Arch::Simple {
                dims: vec![SD + AD, 8, 8, 1],
            },
            Arch::Simple {
                dims: vec![SD, 8, 1],
            },
        )
    };
    let policy = GaussianPolicy::new(&actor, -1.2, &mut rng);
    let critics = CriticEnsemble::new(&critic, SD, 3, &mut rng).unwrap();
    let value = Net::new(&value, &mut rng);
    let mut uni = |lo: f64, hi: f64, r: usize, c: usize| {
        Array2::from_shape_simple_fn((r, c), || rng.random_range(lo..hi))
    };
    let states = uni(-1.0, 1.0, b, SD);
    let actions = uni(-0.9, 0.9, b, AD);
    let noise = uni(-0.5, 0.5, b, AD);
    let adv = uni(-2.0, 2.0, b, 1).column(0).to_owned();
    let y = uni(-1.0, 1.0, b, 1).column(0).to_owned();
    Setup {
        states,
        actions,
        noise,
        policy,
        critics,
        value,
        adv,
        y,
    }
}

fn flat_policy(p: &GaussianPolicy) -> Vec<f64> {
    let mut v = p.mean_net().params().to_vec();
    v.extend_from_slice(p.log_std());
    v
}

fn set_policy(p: &mut GaussianPolicy, flat: &[f64]) {
    let n = p.mean_net().num_params();
    p.mean_net_mut().params_mut().copy_from_slice(&flat[..n]);
    p.log_std_mut().copy_from_slice(&flat[n..]);
}

/// Max relative error of an actor loss gradient (mean net + log-std).
fn check_actor(
    s: &Setup,
    loss: impl Fn(&GaussianPolicy) -> (f64, mood_core::nets::PolicyGrad),
) -> f64 {
    let (_, g) = loss(&s.policy);
    let mut analytic = g.mean.clone();
    analytic.extend_from_slice(&g.log_std);
    let mut p = s.policy.clone();
    let mut flat = flat_policy(&p);
    let numeric = fd_grad(&mut flat, |x| {
        set_policy(&mut p, x);
        loss(&p).0
    });
    max_rel_err(&analytic, &numeric)
}

/// Critic TD regression loss, w.r.t. every member.
pub fn critic_case(s: &Setup) -> f64 {
    let out = critic_loss(&s.critics, s.states.view(), s.actions.view(), s.y.view()).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..s.critics.len() {
        let mut c = s.critics.clone();
        let mut flat = c.members()[i].params().to_vec();
        let numeric = fd_grad(&mut flat, |x| {
            c.member_mut(i).params_mut().copy_from_slice(x);
            critic_loss(&c, s.states.view(), s.actions.view(), s.y.view())
                .unwrap()
                .loss
        });
        worst = worst.max(max_rel_err(&out.grads[i], &numeric));
    }
    worst
}

/// `Q̄` is detached in the analytic gradient, so the numeric side freezes it
/// at its value under the unperturbed policy.
pub fn td3bc_case(s: &Setup, alpha: f64) -> f64 {
    let tilde = s.policy.actions_from_mean(
        s.policy.raw_mean(s.states.view()).unwrap().view(),
        s.noise.view(),
    );
    let qbar = s
        .critics
        .q(0, s.states.view(), tilde.view())
        .unwrap()
        .mapv(f64::abs)
        .mean()
        .unwrap();
    check_actor(s, |p| {
        td3bc_actor_loss_scaled(
            p,
            &s.critics,
            s.states.view(),
            s.actions.view(),
            alpha,
            s.noise.view(),
            Some(qbar),
        )
        .unwrap()
    })
}

pub fn awac_case(s: &Setup, beta: f64) -> f64 {
    check_actor(s, |p| {
        awac_actor_loss(p, s.states.view(), s.actions.view(), s.adv.view(), beta).unwrap()
    })
}

pub fn asac_case(s: &Setup) -> f64 {
    check_actor(s, |p| {
        asac_actor_loss(p, s.states.view(), s.actions.view()).unwrap()
    })
}

pub fn value_case(s: &Setup, tau: f64) -> f64 {
    let (_, g) = value_loss(&s.value, s.states.view(), s.y.view(), tau).unwrap();
    let mut v = s.value.clone();
    let mut flat = v.params().to_vec();
    let numeric = fd_grad(&mut flat, |x| {
        v.params_mut().copy_from_slice(x);
        value_loss(&v, s.states.view(), s.y.view(), tau).unwrap().0
    });
    max_rel_err(&g, &numeric)
}

/// Network backward pass for a random linear functional of the output,
/// w.r.t. parameters and inputs.
pub fn net_case(arch: &Arch, seed: u64) -> f64 {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = Net::new(arch, &mut rng);
    let x = Array2::from_shape_simple_fn((4, arch.input_dim()), || rng.random_range(-1.0..1.0));
    let up = Array2::from_shape_simple_fn((4, arch.output_dim()), || rng.random_range(-1.0..1.0));
    let objective = |n: &Net, x: &Array2<f64>| (n.forward(x.view()).unwrap() * &up).sum();
    let (_, tape) = net.forward_tape(x.view()).unwrap();
    let g = net.backward(&tape, up.view()).unwrap();
    let mut n2 = net.clone();
    let mut flat = net.params().to_vec();
    let numeric = fd_grad(&mut flat, |p| {
        n2.params_mut().copy_from_slice(p);
        objective(&n2, &x)
    });
    let mut xs = x.clone();
    let mut xflat = x.iter().copied().collect::<Vec<_>>();
    let numeric_x = fd_grad(&mut xflat, |v| {
        xs.iter_mut().zip(v).for_each(|(a, b)| *a = *b);
        objective(&net, &xs)
    });
    let gx: Vec<f64> = g.input.iter().copied().collect();
    max_rel_err(&g.params, &numeric).max(max_rel_err(&gx, &numeric_x))
}

/// Every loss and network family; returns `(name, max relative error)`.
pub fn gradient_suite(seed: u64) -> Vec<(String, f64)> {
    let mut out = Vec::new();
    for modern in [false, true] {
        let tag = if modern { "modern" } else { "simple" };
        let s = setup(seed, modern);
        out.push((format!("critic td loss ({tag})"), critic_case(&s)));
        out.push((format!("td3 actor ({tag})"), td3bc_case(&s, 0.0)));
        out.push((format!("td3+bc actor ({tag})"), td3bc_case(&s, 0.7)));
        out.push((format!("expectile value loss ({tag})"), value_case(&s, 0.7)));
        out.push((format!("awac wis actor ({tag})"), awac_case(&s, 0.8)));
        out.push((format!("asac nll actor ({tag})"), asac_case(&s)));
    }
    out.push((
        "simple net backward".into(),
        net_case(
            &Arch::Simple {
                dims: vec![4, 7, 5, 3],
            },
            seed,
        ),
    ));
    out.push((
        "modern net backward".into(),
        net_case(
            &Arch::Modern {
                input: 4,
                hidden: 6,
                blocks: 2,
                output: 3,
            },
            seed,
        ),
    ));
    out
}
