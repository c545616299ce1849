//! Cascading-score target selection over the interaction graph, compared
//! with random selection, and the effect of applying the plan.

use rankstab::dataio::{synth_generate, Regime};
use rankstab::perturbation::{
    apply_plan, budget_count, build_idag, cascading_score, casper_ranking, plan_to_record,
    select_casper, select_random, EditChoice, EditKind,
};

fn main() -> rankstab::Result<()> {
    let ds = synth_generate(300, 100, 0, Regime::Markov);
    let g = build_idag(&ds);
    println!("graph: {} nodes, {} edges", g.len(), g.n_edges());

    let n = budget_count(0.001, ds.len());
    let ranking = casper_ranking(&ds);
    println!("top cascading scores: {:?}", &ranking[..5]);

    let delete = EditChoice::Fixed(EditKind::Delete);
    let casper = select_casper(&ds, n, 0, delete)?;
    let random = select_random(&ds, n, 0, delete)?;
    let mean = |p: &rankstab::perturbation::PerturbationPlan| {
        let s: usize = p
            .edits
            .iter()
            .map(|e| cascading_score(&g, e.target_uid).unwrap())
            .sum();
        s as f64 / p.len() as f64
    };
    println!(
        "{n} edits: mean descendants casper {:.1}, random {:.1}",
        mean(&casper),
        mean(&random)
    );

    let edited = apply_plan(&ds, &casper)?;
    println!("interactions {} -> {}", ds.len(), edited.len());
    let rec = plan_to_record(&select_casper(&ds, 3, 0, EditChoice::Mixed)?, &ds)?;
    println!("{}", serde_json::to_string_pretty(&rec)?);
    Ok(())
}
