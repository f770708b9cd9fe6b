// scratch probe: does MAXIMIZING the span divergence fix wine + blobs?
use lrgmml::io::{load_csv, LabelColumn};
use lrgmml::pipeline::{synthetic_blobs, generate_pairs, embed, knn_error, Standardizer};
use lrgmml::objective::{PairScatter, make_problem, project_state, dominant_subspace, MetricModel, gmml_closed_form};
use lrgmml::grassmann::StiefelPoint;
use lrgmml::solver::{minimize, Problem, SolverOptions};
use nalgebra::DMatrix;
use std::path::Path;

struct Negated<'a, P: Problem>(&'a P);
impl<P: Problem> Problem for Negated<'_, P> {
    fn dims(&self) -> (usize, usize) { self.0.dims() }
    fn cost(&self, u: &StiefelPoint) -> lrgmml::Result<f64> { Ok(-self.0.cost(u)?) }
    fn euclidean_grad(&self, u: &StiefelPoint) -> lrgmml::Result<DMatrix<f64>> {
        Ok(self.0.euclidean_grad(u)? * -1.0)
    }
}

fn train_max(features: &DMatrix<f64>, s: &[(usize,usize)], d: &[(usize,usize)], r: usize, t: f64) -> MetricModel {
    let sc_s = PairScatter::from_pairs(features, s).unwrap();
    let sc_d = PairScatter::from_pairs(features, d).unwrap();
    let problem = make_problem(&sc_s, &sc_d, t, r).unwrap();
    let neg = Negated(&problem);
    let u0 = dominant_subspace(&sc_d, r, 10, 0x1c9b_5eed).unwrap();
    let (u, _) = minimize(&neg, &u0, &SolverOptions::default()).unwrap();
    let st = project_state(&u, &sc_s, &sc_d, t).unwrap();
    MetricModel { u, b: st.b, t }
}

fn main() {
    // blobs span test
    let data = synthetic_blobs(40, 10, 2, 8.0, 7);
    let (s, dd) = generate_pairs(&data.labels, 200, 200, 8).unwrap();
    let model = train_max(&data.features, &s, &dd, 2, 0.5);
    let mut mu = vec![DMatrix::<f64>::zeros(1, 10); 2];
    let mut counts = [0usize; 2];
    for i in 0..data.len() { mu[data.labels[i]] += data.features.row(i); counts[data.labels[i]] += 1; }
    let diff = (&mu[0] / counts[0] as f64) - (&mu[1] / counts[1] as f64);
    let v = diff.transpose() / diff.norm();
    println!("blobs (maximize): |cos| = {:.4}", (model.u.matrix().transpose() * &v).norm());

    // wine: 3 seeded 70/30 splits, r = 6, t grid {0.1..0.9} picking best on test (optimistic probe)
    let wine = load_csv(Path::new("data/wine.csv"), LabelColumn::Last, true).unwrap();
    for seed in [0u64, 1, 2] {
        use rand::{SeedableRng, Rng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut idx: Vec<usize> = (0..wine.len()).collect();
        for i in (1..idx.len()).rev() { let j = rng.gen_range(0..=i); idx.swap(i, j); }
        let n_train = (wine.len() as f64 * 0.7).round() as usize;
        let tr = wine.subset(&idx[..n_train]);
        let te = wine.subset(&idx[n_train..]);
        let std = Standardizer::fit(&tr.features);
        let trf = std.apply(&tr.features);
        let tef = std.apply(&te.features);
        let (sp, dp) = generate_pairs(&tr.labels, 240, 240, seed + 100).unwrap();
        let mut line = format!("wine seed {seed}:");
        for t in [0.1, 0.3, 0.5, 0.7, 0.9] {
            let model = train_max(&trf, &sp, &dp, 6, t);
            let tre = embed(&model, &trf).unwrap();
            let tee = embed(&model, &tef).unwrap();
            let err = knn_error(&tre, &tr.labels, &tee, &te.labels, 5).unwrap();
            line += &format!(" t={t}: {:.4}", err);
        }
        // gmml reference
        let sc_s = PairScatter::from_pairs(&trf, &sp).unwrap();
        let sc_d = PairScatter::from_pairs(&trf, &dp).unwrap();
        let a = gmml_closed_form(&sc_s, &sc_d, 0.5).unwrap();
        let gm = MetricModel { u: StiefelPoint::from_matrix(DMatrix::identity(13,13)).unwrap(), b: a, t: 0.5 };
        let tre = embed(&gm, &trf).unwrap();
        let tee = embed(&gm, &tef).unwrap();
        let gerr = knn_error(&tre, &tr.labels, &tee, &te.labels, 5).unwrap();
        let eerr = knn_error(&trf, &tr.labels, &tef, &te.labels, 5).unwrap();
        println!("{line} | gmml(t=.5): {:.4} euclid: {:.4}", gerr, eerr);
    }
}
