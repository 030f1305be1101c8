mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use schedlift::autoscheduler::{Genome, Sketch};
use schedlift::executor::{build_plan, PlanError};
use schedlift::loopnest::{random_inputs, reference_execute};
use schedlift::schedule::ScheduleErrorKind;

use common::{first_mismatch, random_kernel, FAMILIES};

/// Schedules bred on one kernel, replayed on another of the same class.
#[test]
fn grammar_pairs_match_the_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0dd5);
    let (mut valid, mut invalid) = (0, 0);
    let mut pair = 0;
    while valid < 1000 {
        assert!(pair < 10_000, "only {valid} of {pair} pairs applied");
        pair += 1;
        let family = FAMILIES[pair % FAMILIES.len()];
        let source = random_kernel(family, &mut rng);
        let target = random_kernel(family, &mut rng);
        let sketch = Sketch::of(&source);
        let mut g = Genome::random(&sketch, &mut rng);
        for _ in 0..rng.random_range(0..6) {
            g.mutate(&sketch, &mut rng);
        }
        let schedule = g.render(&sketch);
        match build_plan(&schedule, &target) {
            Ok(plan) => {
                let inputs = random_inputs(&target, pair as u64);
                let want = reference_execute(&target, &inputs).unwrap();
                let threads = 1 + pair % 3;
                let got = plan.execute(&inputs, threads).unwrap();
                assert_eq!(
                    first_mismatch(&got, &want),
                    None,
                    "pair {pair}: {} on {}",
                    schedule.serialize(),
                    target.fingerprint()
                );
                valid += 1;
            }
            Err(PlanError::Schedule(e)) => {
                assert_ne!(e.kind, ScheduleErrorKind::StructuralMismatch, "pair {pair}: {e}");
                invalid += 1;
            }
            Err(e) => {
                assert!(!e.reason().is_empty());
                invalid += 1;
            }
        }
    }
    assert_eq!(valid + invalid, pair);
    println!("{valid} valid and {invalid} invalid pairs");
}

/// Every genome rendered against the kernel it was drawn for lowers.
#[test]
fn mutation_closure_on_the_source_kernel() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for i in 0..600 {
        let k = random_kernel(FAMILIES[i % FAMILIES.len()], &mut rng);
        let sketch = Sketch::of(&k);
        let mut g = Genome::random(&sketch, &mut rng);
        for _ in 0..8 {
            g.mutate(&sketch, &mut rng);
            if let Err(e) = build_plan(&g.render(&sketch), &k) {
                panic!("{i}: {e:?} for {}", g.render(&sketch).serialize());
            }
        }
    }
}
