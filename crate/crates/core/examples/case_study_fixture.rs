//! Writes `data/case_study.csv`: a synthetic stand-in shaped like a
//! neonatal gut cohort (58 infants, 922 stool samples, 29 classes of which
//! 13 are too rare to keep at K = 5).
//!
//! `cargo run -p funczidm --example case_study_fixture -- data/case_study.csv`

use std::path::PathBuf;

use funczidm::sampler::geweke::sample_multinomial;
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const COMMON: [&str; 16] = [
    "Bacilli",
    "Gammaproteobacteria",
    "Clostridia",
    "Actinobacteria",
    "Bacteroidia",
    "Negativicutes",
    "Erysipelotrichia",
    "Betaproteobacteria",
    "Alphaproteobacteria",
    "Fusobacteriia",
    "Coriobacteriia",
    "Verrucomicrobiae",
    "Deltaproteobacteria",
    "Flavobacteriia",
    "Mollicutes",
    "Epsilonproteobacteria",
];

const RARE: [&str; 13] = [
    "Sphingobacteriia",
    "Cytophagia",
    "Chloroflexia",
    "Deinococci",
    "Spirochaetia",
    "Thermomicrobia",
    "Planctomycetia",
    "Acidobacteriia",
    "Nitrospira",
    "Chlamydiia",
    "Synergistia",
    "Methanobacteria",
    "Anaerolineae",
];

const INFANTS: usize = 58;
const SAMPLES: usize = 922;

fn main() {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data/case_study.csv"));
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_601);

    // samples per infant, nudged until the total is exact
    let mut m: Vec<usize> = (0..INFANTS).map(|_| rng.random_range(10..=22)).collect();
    while m.iter().sum::<usize>() != SAMPLES {
        let i = rng.random_range(0..INFANTS);
        if m.iter().sum::<usize>() < SAMPLES {
            if m[i] < 30 {
                m[i] += 1;
            }
        } else if m[i] > 6 {
            m[i] -= 1;
        }
    }

    let jc = COMMON.len();
    let intercept: Vec<f64> = (0..jc).map(|j| 1.5 - 0.25 * j as f64).collect();
    let slope: Vec<f64> = (0..jc).map(|_| rng.random_range(-0.04..0.04)).collect();
    let milk_effect: Vec<f64> = (0..jc).map(|_| rng.random_range(-0.5..0.5)).collect();
    let at_risk_p: Vec<f64> = (0..jc)
        .map(|j| if j == 0 { 1.0 } else { rng.random_range(0.4..1.0) })
        .collect();

    let mut w = csv::Writer::from_path(&out).expect("output file");
    let mut header = vec!["id", "day", "milk", "sex", "delivery", "room", "gest_age"];
    header.extend(COMMON);
    header.extend(RARE);
    w.write_record(&header).unwrap();

    let mut rows: Vec<Vec<String>> = Vec::with_capacity(SAMPLES);
    let mut owner: Vec<usize> = Vec::with_capacity(SAMPLES);
    for (i, &mi) in m.iter().enumerate() {
        let id = format!("infant{:02}", i + 1);
        let sex = if rng.random::<bool>() { "female" } else { "male" };
        let delivery = if rng.random::<f64>() < 0.6 { "c-section" } else { "vaginal" };
        let room = if rng.random::<f64>() < 0.5 { "multi" } else { "single" };
        let gest_age: f64 = 24.0 + 8.0 * rng.random::<f64>();
        let at_risk: Vec<bool> = at_risk_p.iter().map(|&p| rng.random::<f64>() < p).collect();
        let r: Vec<f64> = (0..jc).map(|_| 0.3 * rng.sample::<f64, _>(StandardNormal)).collect();
        let mut days: Vec<usize> = sample_indices(&mut rng, 60, mi).into_iter().map(|d| d + 1).collect();
        days.sort_unstable();
        for day in days {
            let milk_level = rng.random_range(0..3);
            let milk = ["<10%", "10-50%", ">50%"][milk_level];
            let psi: Vec<f64> = (0..jc)
                .map(|j| {
                    if !at_risk[j] {
                        return 0.0;
                    }
                    let lg = intercept[j]
                        + slope[j] * day as f64
                        + milk_effect[j] * milk_level as f64
                        + r[j];
                    let noise: f64 = rng.sample(StandardNormal);
                    (lg + 0.5 * noise).exp()
                })
                .collect();
            let depth = rng.random_range(2_000..=20_000);
            let counts = sample_multinomial(depth, &psi, &mut rng);
            let mut row = vec![
                id.clone(),
                day.to_string(),
                milk.to_string(),
                sex.to_string(),
                delivery.to_string(),
                room.to_string(),
                format!("{gest_age:.2}"),
            ];
            row.extend(counts.iter().map(|c| c.to_string()));
            row.extend(std::iter::repeat_n("0".to_string(), RARE.len()));
            rows.push(row);
            owner.push(i);
        }
    }

    // each rare class shows up in one to four infants
    let first_rare = header.len() - RARE.len();
    for k in 0..RARE.len() {
        let n_carriers = rng.random_range(1..=4);
        let carriers = sample_indices(&mut rng, INFANTS, n_carriers);
        for i in carriers {
            let own: Vec<usize> = (0..rows.len()).filter(|&s| owner[s] == i).collect();
            let hits = rng.random_range(1..=own.len().min(3));
            for s in sample_indices(&mut rng, own.len(), hits) {
                rows[own[s]][first_rare + k] = rng.random_range(1..50u32).to_string();
            }
        }
    }
    for row in rows {
        w.write_record(&row).unwrap();
    }
    w.flush().unwrap();
    eprintln!("wrote {} samples to {}", SAMPLES, out.display());
}
