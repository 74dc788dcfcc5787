//! Shared property suites, also compiled into the command-line crate's
//! acceptance target.
#![allow(dead_code)]

use opic_core::mesh::{build_hierarchy, icosphere_vertex_count, MeshHierarchy};
use opic_core::models::{loss_and_grad, opic_input, LossSpec, UNet, UNetConfig};
use opic_core::nncore::{grad_check, ConvShape, GradCheckReport, ParamStore, RcWeights, Tape, Var};
use opic_core::synthdata::{generate_cohort, SynthConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const GRAD_TOL: f64 = 1e-4;
pub const GRAD_EPS: f64 = 1e-5;
/// Parameters checked per case, evenly strided.
pub const GRAD_SAMPLES: usize = 600;

/// Vertex count, 12 pentagons, Euler characteristic 2 and unit norm for
/// every level up to `max_level`.
pub fn mesh_suite(max_level: usize) -> Result<(), String> {
    let h = build_hierarchy(max_level);
    for (l, m) in h.levels().iter().enumerate() {
        let v = m.num_vertices();
        if v != 10 * 4usize.pow(l as u32) + 2 || v != icosphere_vertex_count(l) {
            return Err(format!("level {l}: {v} vertices"));
        }
        let pent = (0..v).filter(|&i| m.degree(i) == 5).count();
        let hex = (0..v).filter(|&i| m.degree(i) == 6).count();
        if pent != 12 || pent + hex != v {
            return Err(format!("level {l}: {pent} degree-5 and {hex} degree-6 vertices"));
        }
        if m.euler_characteristic() != 2 {
            return Err(format!("level {l}: Euler characteristic {}", m.euler_characteristic()));
        }
        if let Some(p) = m.vertices().iter().find(|p| ((p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt() - 1.0).abs() > 1e-12) {
            return Err(format!("level {l}: vertex {p:?} off the unit sphere"));
        }
    }
    Ok(())
}

fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn strided(n: usize) -> Vec<usize> {
    let step = n.div_ceil(GRAD_SAMPLES).max(1);
    (0..n).step_by(step).collect()
}

/// Checks a loss built by `record` on a fresh tape over `shapes`.
fn check_tape(
    shapes: Vec<ConvShape>,
    seed: u64,
    h: &MeshHierarchy,
    record: impl for<'t> Fn(&mut Tape<'t, f64>, &'t MeshHierarchy) -> opic_core::Result<Var>,
) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = ParamStore::<f64>::init_uniform(shapes.clone(), &mut rng);
    let analytic = {
        let mut tape = Tape::new(&p);
        let l = record(&mut tape, h).unwrap();
        tape.backward(l).unwrap().params
    };
    let loss = |x: &[f64]| {
        let q = ParamStore::from_data(shapes.clone(), x.to_vec())?;
        let mut tape = Tape::new(&q);
        let l = record(&mut tape, h)?;
        Ok(tape.scalar(l))
    };
    grad_check(p.data(), &analytic, Some(&strided(p.len())), GRAD_EPS, loss).unwrap()
}

pub fn grad_single_conv() -> GradCheckReport {
    let h = build_hierarchy(2);
    let n = h.finest().num_vertices();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = normals(&mut rng, 3 * n);
    let y = normals(&mut rng, 4 * n);
    let shapes = vec![ConvShape { in_channels: 3, out_channels: 4 }];
    check_tape(shapes, 1, &h, |t, h| {
        let i = t.input(x.clone(), 3, n)?;
        let o = t.conv(i, 0, h.finest())?;
        t.l2_loss(o, &y)
    })
}

pub fn grad_conv_pool_unpool() -> GradCheckReport {
    let h = build_hierarchy(2);
    let n = h.finest().num_vertices();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = normals(&mut rng, 3 * n);
    let y = normals(&mut rng, 4 * n);
    let shapes = vec![
        ConvShape { in_channels: 3, out_channels: 4 },
        ConvShape { in_channels: 4, out_channels: 4 },
    ];
    check_tape(shapes, 2, &h, |t, h| {
        let i = t.input(x.clone(), 3, n)?;
        let a = t.conv(i, 0, h.finest())?;
        let p = t.pool(a, h, 2)?;
        let b = t.conv(p, 1, h.level(1)?)?;
        let u = t.unpool(b, h, 1)?;
        t.l2_loss(u, &y)
    })
}

/// A small conditioned network on a real synthetic subject.
pub struct OpicFixture {
    pub h: MeshHierarchy,
    pub net: UNet,
    pub params: ParamStore<f64>,
    pub input: Vec<f64>,
    pub own: Vec<f64>,
    pub others: Vec<Vec<f64>>,
}

pub fn opic_fixture(level: usize) -> OpicFixture {
    let cfg = SynthConfig {
        level,
        components: 4,
        n_train: 4,
        n_val: 1,
        n_test: 1,
        groups: 2,
        tasks_per_group: 1,
        seed: 5,
        ..Default::default()
    };
    let c = generate_cohort(&cfg).unwrap();
    let h = build_hierarchy(level);
    let net = UNet::new(
        c.hemispheres * c.components + c.hemispheres,
        c.hemispheres,
        UNetConfig {
            widths: vec![4, 6, 8],
            convs_per_block: 1,
        },
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let params = ParamStore::<f64>::init_uniform(net.shapes(), &mut rng);
    let s = &c.subjects[0];
    let input = opic_input::<f64>(&s.connectome, &c.tasks.task(0).gavg.field).unwrap();
    let own = s.contrasts[0].data().to_vec();
    let others = c.subjects[1..4].iter().map(|o| o.contrasts[0].data().to_vec()).collect();
    OpicFixture {
        h,
        net,
        params,
        input,
        own,
        others,
    }
}

fn check_fixture<'f>(f: &'f OpicFixture, spec: impl Fn() -> LossSpec<'f, f64>) -> GradCheckReport {
    let (_, analytic) = loss_and_grad(&f.net, &f.params, &f.h, f.input.clone(), &spec()).unwrap();
    let loss = |x: &[f64]| {
        let q = ParamStore::from_data(f.net.shapes(), x.to_vec())?;
        Ok(loss_and_grad(&f.net, &q, &f.h, f.input.clone(), &spec())?.0)
    };
    grad_check(f.params.data(), &analytic, Some(&strided(f.params.len())), GRAD_EPS, loss).unwrap()
}

pub fn grad_opic_l2(f: &OpicFixture) -> GradCheckReport {
    check_fixture(f, || LossSpec::L2 { target: &f.own })
}

pub fn grad_rc(f: &OpicFixture) -> GradCheckReport {
    check_fixture(f, || LossSpec::Rc {
        own: &f.own,
        others: f.others.iter().map(|o| o.as_slice()).collect(),
        weights: RcWeights {
            alpha: 0.5,
            margin: 1.0,
        },
    })
}

use opic_core::cohort::Cohort;
use opic_core::eval::{
    auc, dice_auc, dice_curve, dice_top_x, identification_accuracy, identification_matrix, normalize_id_matrix,
    paired_ttest, predictable_filter, DiceCurve, IdNormalization, IdentificationMatrix, THRESHOLDS,
};
use opic_core::nncore::ChannelField;

pub type Check = (&'static str, Result<(), String>);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn line(v: &[f64]) -> ChannelField {
    ChannelField::new(0, 1, v.len(), v.to_vec()).unwrap()
}

/// Top-k set by sorting (value desc, index asc).
fn oracle_top(v: &[f64], x: f64) -> Vec<usize> {
    let k = (x / 100.0 * v.len() as f64).round() as usize;
    let mut ix: Vec<usize> = (0..v.len()).collect();
    ix.sort_by(|&i, &j| v[j].partial_cmp(&v[i]).unwrap().then(i.cmp(&j)));
    ix.truncate(k);
    ix
}

fn oracle_dice(a: &[f64], b: &[f64], x: f64) -> f64 {
    let (ta, tb) = (oracle_top(a, x), oracle_top(b, x));
    let common = ta.iter().filter(|i| tb.contains(i)).count();
    2.0 * common as f64 / (ta.len() + tb.len()) as f64
}

fn oracle_auc(a: &[f64], b: &[f64]) -> f64 {
    let y: Vec<f64> = THRESHOLDS.iter().map(|&x| oracle_dice(a, b, x)).collect();
    let area: f64 = (1..y.len())
        .map(|i| 0.5 * (y[i] + y[i - 1]) * (THRESHOLDS[i] - THRESHOLDS[i - 1]))
        .sum();
    area / (THRESHOLDS[THRESHOLDS.len() - 1] - THRESHOLDS[0])
}

fn random_field(rng: &mut ChaCha8Rng, n: usize) -> ChannelField {
    line(&normals(rng, n))
}

/// Every worked metric example, with recomputation oracles where the
/// expected value is derived.
pub fn metric_suite() -> Vec<Check> {
    let mut out: Vec<Check> = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(99);

    out.push(("dice a=b is 1 at every x", {
        let a = random_field(&mut rng, 200);
        let c = dice_curve(&a, &a, &THRESHOLDS).unwrap();
        ensure(c.values.iter().all(|&v| v == 1.0), || format!("{:?}", c.values))
    }));
    out.push(("dice top-2 of 10 {3,7} vs {7,9} is 0.5", {
        let mut a = vec![0.0; 10];
        a[3] = 2.0;
        a[7] = 1.0;
        let mut b = vec![0.0; 10];
        b[7] = 2.0;
        b[9] = 1.0;
        let got = dice_top_x(&line(&a), &line(&b), 20.0).unwrap();
        ensure(got == 0.5 && oracle_dice(&a, &b, 20.0) == 0.5, || format!("{got}"))
    }));
    out.push(("dice disjoint top sets is 0", {
        let a: Vec<f64> = (0..10).map(f64::from).collect();
        let b: Vec<f64> = a.iter().map(|v| -v).collect();
        let got = dice_top_x(&line(&a), &line(&b), 30.0).unwrap();
        ensure(got == 0.0, || format!("{got}"))
    }));
    out.push(("dice curve has 10 points and matches pointwise oracle", {
        let (a, b) = (random_field(&mut rng, 321), random_field(&mut rng, 321));
        let c = dice_curve(&a, &b, &THRESHOLDS).unwrap();
        let want: Vec<f64> = THRESHOLDS.iter().map(|&x| oracle_dice(a.data(), b.data(), x)).collect();
        let direct: Vec<f64> = THRESHOLDS.iter().map(|&x| dice_top_x(&a, &b, x).unwrap()).collect();
        ensure(c.values.len() == 10 && c.values == want && c.values == direct, || {
            format!("{:?} vs {want:?}", c.values)
        })
    }));
    out.push(("auc of all-ones 1, all-zeros 0, linear 0.2..0.4 is 0.3", {
        let mk = |v: Vec<f64>, t: Vec<f64>| dice_auc(&DiceCurve { thresholds: t, values: v }).unwrap();
        let ones = mk(vec![1.0; 10], THRESHOLDS.to_vec());
        let zeros = mk(vec![0.0; 10], THRESHOLDS.to_vec());
        let lin = mk(THRESHOLDS.iter().map(|x| 0.2 + 0.2 * (x - 5.0) / 45.0).collect(), THRESHOLDS.to_vec());
        ensure(ones == 1.0 && zeros == 0.0 && (lin - 0.3).abs() < 1e-12, || format!("{ones} {zeros} {lin}"))
    }));
    out.push(("identification matrix: shape, unit diagonal, 9 independent entries", {
        let fields: Vec<ChannelField> = (0..3).map(|_| random_field(&mut rng, 400)).collect();
        let ids = ["a", "b", "c"];
        let lab: Vec<(&str, &ChannelField)> = ids.iter().copied().zip(fields.iter()).collect();
        let self_m = identification_matrix(&lab, &lab).unwrap();
        let others: Vec<ChannelField> = (0..3).map(|_| random_field(&mut rng, 400)).collect();
        let lab_t: Vec<(&str, &ChannelField)> = ids.iter().copied().zip(others.iter()).collect();
        let m = identification_matrix(&lab, &lab_t).unwrap();
        let mut ok = self_m.n == 3 && (0..3).all(|i| self_m.get(i, i) == 1.0);
        for i in 0..3 {
            for j in 0..3 {
                let want = oracle_auc(fields[i].data(), others[j].data());
                ok &= (m.get(i, j) - want).abs() < 1e-12 && m.get(i, j) == auc(&fields[i], &others[j]).unwrap();
            }
        }
        ensure(ok, || format!("{:?}", m.data))
    }));
    out.push(("column standardization: mean 0, variance 1, 2x2 fixture", {
        let data: Vec<f64> = normals(&mut rng, 25);
        let m = IdentificationMatrix::new(5, data, IdNormalization::Raw).unwrap();
        let z = normalize_id_matrix(&m).unwrap();
        let mut ok = true;
        for j in 0..5 {
            let col: Vec<f64> = (0..5).map(|i| z.get(i, j)).collect();
            let mean = col.iter().sum::<f64>() / 5.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 5.0;
            ok &= mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-9;
        }
        let f = normalize_id_matrix(&IdentificationMatrix::new(2, vec![1.0, 0.0, 0.0, 1.0], IdNormalization::Raw).unwrap())
            .unwrap();
        ensure(ok && f.data == vec![1.0, -1.0, -1.0, 1.0], || format!("{:?}", f.data))
    }));
    out.push(("identification accuracy: diagonal 1/1, rank fixture 2/3 and 5/6, constant 0", {
        let diag = IdentificationMatrix::new(3, vec![1.0, 0.1, 0.2, 0.0, 0.9, 0.3, 0.1, 0.2, 0.8], IdNormalization::Raw)
            .unwrap();
        let d = identification_accuracy(&diag).unwrap();
        let fix = IdentificationMatrix::new(3, vec![0.9, 0.1, 0.2, 0.5, 0.4, 0.3, 0.1, 0.2, 0.8], IdNormalization::Raw)
            .unwrap();
        let a = identification_accuracy(&fix).unwrap();
        let c = identification_accuracy(&IdentificationMatrix::new(3, vec![0.5; 9], IdNormalization::Raw).unwrap())
            .unwrap();
        ensure(
            d.top1 == 1.0
                && d.mean_rank == 1.0
                && (a.top1 - 2.0 / 3.0).abs() < 1e-15
                && (a.mean_rank - 5.0 / 6.0).abs() < 1e-15
                && c.top1 == 0.0,
            || format!("{d:?} {a:?} {c:?}"),
        )
    }));
    out.push(("paired t-test: a=b, [1,2,3] fixture, sign flip", {
        let same = paired_ttest(&[0.3, 0.5, 0.9], &[0.3, 0.5, 0.9]).unwrap();
        let r = paired_ttest(&[1.0, 2.0, 3.0], &[0.0; 3]).unwrap();
        let flip = paired_ttest(&[0.0; 3], &[1.0, 2.0, 3.0]).unwrap();
        // closed form at df = 2: p = 1 − |t| / sqrt(t² + 2)
        let t_oracle = 2.0 / (1.0 / 3f64.sqrt());
        let p_oracle = 1.0 - t_oracle / (t_oracle * t_oracle + 2.0).sqrt();
        ensure(
            same.t == 0.0
                && same.p == 1.0
                && (r.t - 3.464).abs() <= 1e-3
                && (r.p - 0.0742).abs() <= 1e-3
                && (r.t - t_oracle).abs() < 1e-12
                && (r.p - p_oracle).abs() < 1e-9
                && r.df == 2
                && flip.t == -r.t
                && flip.p == r.p,
            || format!("{same:?} {r:?} {flip:?}"),
        )
    }));
    // retest AUC is exactly 1 only when the test scan is noiseless as well
    out.push(("predictable filter keeps all tasks without scan noise", {
        let c = filter_cohort(1.5, true, 0.0, 0.0);
        let p = predictable_filter(&c).unwrap();
        ensure(p.iter().all(|t| t.predictable && t.retest_auc == 1.0), || format!("{p:?}"))
    }));
    out.push(("predictable filter drops tasks without subject effect under heavy retest noise", {
        let c = filter_cohort(0.0, false, 0.1, 3.0);
        let p = predictable_filter(&c).unwrap();
        ensure(p.iter().all(|t| !t.predictable), || format!("{p:?}"))
    }));
    out
}

fn filter_cohort(beta: f64, nonlinear: bool, sigma_obs: f64, sigma_rt: f64) -> Cohort {
    generate_cohort(&SynthConfig {
        level: 3,
        n_train: 10,
        n_val: 2,
        n_test: 6,
        groups: 2,
        tasks_per_group: 2,
        subject_effect: beta,
        nonlinear,
        sigma_obs,
        sigma_rt,
        seed: 17,
        ..Default::default()
    })
    .unwrap()
}

use opic_core::baselines::fit_linear_baseline;
use opic_core::synthdata::{oracle_linear_fit, ContrastModel};

/// Noiseless parcel-linear cohort: contrasts are exactly affine in the
/// connectome features within each parcel.
pub fn linear_cohort() -> Cohort {
    generate_cohort(&SynthConfig {
        level: 3,
        contrast: ContrastModel::ParcelLinear,
        nonlinear: false,
        sigma_obs: 0.0,
        sigma_rt: 0.0,
        n_train: 16,
        n_val: 4,
        n_test: 6,
        groups: 2,
        tasks_per_group: 2,
        seed: 23,
        ..Default::default()
    })
    .unwrap()
}

/// Largest coefficient error of the fitted parcel maps.
pub fn linear_recovery_error(c: &Cohort) -> f64 {
    let truth = c.truth.as_ref().unwrap();
    let fit = fit_linear_baseline(c, &c.parcels).unwrap();
    let mut worst: f64 = 0.0;
    for (j, task) in c.tasks.tasks().iter().enumerate() {
        let t = fit.task_index(&task.id).unwrap();
        for (p, want) in truth.parcel_maps[j].iter().enumerate() {
            let got = &fit.maps[t][p];
            worst = worst.max((got.intercept - want.intercept).abs());
            for (a, b) in got.weights.iter().zip(&want.weights) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    worst
}

/// `(task, oracle held-out l2, group-average held-out l2)` per task.
pub fn oracle_vs_group_average(c: &Cohort) -> Vec<(String, f64, f64)> {
    c.tasks
        .tasks()
        .iter()
        .map(|t| {
            let f = oracle_linear_fit(c, &t.id).unwrap();
            (t.id.clone(), f.heldout_l2, f.group_average_l2)
        })
        .collect()
}
