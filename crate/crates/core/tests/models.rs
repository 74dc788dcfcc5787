mod support;

use opic_core::cohort::{Cohort, Split};
use opic_core::mesh::build_hierarchy;
use opic_core::models::{
    average_indomain_predictions, bsc_forward, logo_run, loss_and_grad, opic_forward, train, LossSpec, Model,
    TrainConfig, UNet, UNetConfig,
};
use opic_core::nncore::{grad_check, ParamStore};
use opic_core::synthdata::{generate_cohort, SynthConfig};
use opic_core::Error;
use rand::SeedableRng;

fn tiny() -> UNetConfig {
    UNetConfig {
        widths: vec![4, 8],
        convs_per_block: 1,
    }
}

fn cohort(level: usize, seed: u64) -> Cohort {
    generate_cohort(&SynthConfig {
        level,
        n_train: 6,
        n_val: 2,
        n_test: 3,
        seed,
        ..Default::default()
    })
    .unwrap()
}

#[test]
fn conditioned_forward_shape_and_determinism() {
    let c = cohort(2, 1);
    let h = build_hierarchy(2);
    let m = Model::opic(1, c.components, tiny(), 7).unwrap();
    let s = &c.subjects[0];
    let a = opic_forward(&m, &h, &s.connectome, &c.tasks.task(0).gavg).unwrap();
    let b = opic_forward(&m, &h, &s.connectome, &c.tasks.task(0).gavg).unwrap();
    assert_eq!((a.channels(), a.vertices()), (1, c.vertices()));
    assert_eq!(a, b);
    let mut raw = c.tasks.task(0).gavg.clone();
    raw.field = raw.field.map(|x| 2.0 * x).unwrap();
    assert!(opic_forward(&m, &h, &s.connectome, &raw).is_err());
}

#[test]
fn per_task_forward_blocks_and_gradients() {
    let c = cohort(2, 2);
    let h = build_hierarchy(2);
    let tasks: Vec<String> = c.tasks.tasks()[..3].iter().map(|t| t.id.clone()).collect();
    let m = Model::bsc(1, c.components, tasks.clone(), tiny(), 3).unwrap();
    let s = &c.subjects[0];
    let out = bsc_forward(&m, &h, &s.connectome).unwrap();
    assert_eq!(out.channels(), 3);
    let again = bsc_forward(&m, &h, &s.connectome).unwrap();
    for t in &tasks {
        assert_eq!(m.task_block(&out, t).unwrap(), m.task_block(&again, t).unwrap());
    }
    assert!(m.task_block(&out, "missing").is_err());

    let net = UNet::new(c.components, 3, tiny()).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
    let p = ParamStore::<f64>::init_uniform(net.shapes(), &mut rng);
    let input = s.connectome.to_field().data().to_vec();
    let target: Vec<f64> = (0..3).flat_map(|j| s.contrasts[j].data().to_vec()).collect();
    let spec = LossSpec::L2 { target: &target };
    let (_, g) = loss_and_grad(&net, &p, &h, input.clone(), &spec).unwrap();
    let ix: Vec<usize> = (0..p.len()).step_by(3).collect();
    let r = grad_check(p.data(), &g, Some(&ix), support::GRAD_EPS, |x| {
        let q = ParamStore::from_data(net.shapes(), x.to_vec())?;
        Ok(loss_and_grad(&net, &q, &h, input.clone(), &spec)?.0)
    })
    .unwrap();
    assert!(r.passes(support::GRAD_TOL), "{r:?}");
}

#[test]
fn training_fits_a_noiseless_linear_cohort() {
    let c = generate_cohort(&SynthConfig {
        level: 3,
        nonlinear: false,
        sigma_obs: 0.0,
        seed: 8,
        ..Default::default()
    })
    .unwrap();
    let h = build_hierarchy(c.level);
    let cfg = TrainConfig {
        epochs: 20,
        seed: 1,
        ..Default::default()
    };
    let m = Model::opic(1, c.components, UNetConfig { widths: vec![16, 32], convs_per_block: 1 }, 1).unwrap();
    let t = train(m, &c, &h, &cfg).unwrap();
    let first = t.history[0].train_loss;
    let last = t.history.last().unwrap().train_loss;
    eprintln!("initial {first}, final {last}");
    assert!(last < 0.1 * first, "initial {first}, final {last}");
}

#[test]
fn selection_determinism_and_holdout_audit() {
    let c = cohort(2, 3);
    let h = build_hierarchy(2);
    let cfg = TrainConfig {
        epochs: 3,
        seed: 5,
        holdout_group: Some("G2".into()),
        ..Default::default()
    };
    let run = || train(Model::opic(1, c.components, tiny(), 5).unwrap(), &c, &h, &cfg).unwrap();
    let (a, b) = (run(), run());
    let best = a.history.iter().map(|e| e.val_loss).fold(f64::INFINITY, f64::min);
    assert_eq!(a.best_val_loss(), best);
    assert_eq!(a.model.params, b.model.params);
    for (x, y) in a.history.iter().zip(&b.history) {
        assert_eq!((x.train_loss, x.val_loss, &x.tasks_read), (y.train_loss, y.val_loss, &y.tasks_read));
    }
    for e in &a.history[1..] {
        assert!(!e.tasks_read.is_empty());
        assert!(e.tasks_read.iter().all(|t| !t.starts_with("G2_")), "{:?}", e.tasks_read);
    }
    assert!(a.train_tasks.iter().all(|t| !t.starts_with("G2_")));

    let bsc = Model::bsc(1, c.components, vec![c.tasks.task(0).id.clone()], tiny(), 1).unwrap();
    assert!(matches!(train(bsc, &c, &h, &cfg), Err(Error::Config(_))));
    let unknown = TrainConfig {
        holdout_group: Some("G9".into()),
        ..cfg.clone()
    };
    assert!(train(Model::opic(1, c.components, tiny(), 5).unwrap(), &c, &h, &unknown).is_err());
}

#[test]
fn leave_one_group_out_structure() {
    let c = cohort(2, 4);
    let h = build_hierarchy(2);
    let cfg = TrainConfig {
        epochs: 1,
        ..Default::default()
    };
    let out = logo_run(&c, &h, &cfg, &tiny()).unwrap();
    let groups = c.tasks.groups();
    assert_eq!(out.folds.len(), groups.len());
    assert_eq!(groups.len(), 4);
    for (f, g) in groups.iter().enumerate() {
        assert_eq!(&out.folds[f].group, g);
        assert!(out.folds[f].trained.train_tasks.iter().all(|t| !t.starts_with(&format!("{g}_"))));
    }
    let test = c.split_indices(Split::Test);
    for &i in &test {
        let s = &c.subjects[i].id;
        for t in c.tasks.tasks() {
            let entries: Vec<_> = out.predictions.entries.iter().filter(|e| &e.subject == s && e.task == t.id).collect();
            assert_eq!(entries.len(), 4);
            assert_eq!(entries.iter().filter(|e| !e.in_domain).count(), 1);
            let ood = entries.iter().find(|e| !e.in_domain).unwrap();
            assert_eq!(out.predictions.folds[ood.fold], t.group);
            let ins: Vec<_> = entries.iter().filter(|e| e.in_domain).map(|e| &e.field).collect();
            let merged = average_indomain_predictions(&out.predictions, s, &t.id).unwrap();
            for v in 0..merged.data().len() {
                let want = (ins[0].data()[v] + ins[1].data()[v] + ins[2].data()[v]) / 3.0;
                assert!((merged.data()[v] - want).abs() < 1e-12);
            }
        }
    }
    let seeds: std::collections::BTreeSet<u64> = out.folds.iter().map(|f| f.seed).collect();
    assert_eq!(seeds.len(), 4);
}
