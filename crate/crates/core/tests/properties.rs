use proptest::prelude::*;
use t2i_agents::gateway::mock::{MockHandles, MockScoring, SegmenterFallback};
use t2i_agents::gateway::structured::PixelBox;
use t2i_agents::gateway::TemplateSet;
use t2i_agents::interpreter::{finalize_report, resolve_ambiguities};
use t2i_agents::region::boxes_to_mask;
use t2i_agents::*;

fn naive_mean(xs: &[f64]) -> f64 {
    let mut total = 0.0;
    for x in xs {
        total += x;
    }
    total / xs.len() as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn overall_is_the_bounded_permutation_invariant_mean(
        scores in prop::array::uniform10(0.0f64..=10.0),
        rotate in 0usize..10,
    ) {
        let overall = compute_overall(&scores).unwrap();
        prop_assert!((overall - naive_mean(&scores)).abs() <= 1e-9);
        let mut permuted = scores;
        permuted.rotate_left(rotate);
        permuted.reverse();
        prop_assert_eq!(compute_overall(&permuted).unwrap(), overall);
        let lo = scores.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(lo <= overall && overall <= hi);
    }

    #[test]
    fn loop_guard_counts_turns(
        scores in prop::collection::vec(0.0f64..=10.0, 1..8),
        threshold in 0.0f64..=10.0,
        max_regen in 0u32..=5,
    ) {
        // Walk the guard the way the orchestrator does, one turn per score.
        let mut turns = 0usize;
        loop {
            let s = scores.get(turns).or(scores.last()).copied().unwrap();
            turns += 1;
            match decide(s, turns as u32 - 1, threshold, max_regen) {
                LoopDecision::Continue => continue,
                _ => break,
            }
        }
        let first_pass = scores.iter().position(|&s| s >= threshold);
        let expected = first_pass.unwrap_or(usize::MAX).min(max_regen as usize) + 1;
        prop_assert_eq!(turns, expected);
        prop_assert!(turns <= max_regen as usize + 1);
    }

    #[test]
    fn boxes_match_a_per_pixel_oracle(
        boxes in prop::collection::vec((-10.0f64..70.0, -10.0f64..70.0, -10.0f64..70.0, -10.0f64..70.0), 1..4),
        w in 1u32..64,
        h in 1u32..64,
    ) {
        let boxes: Vec<PixelBox> = boxes.into_iter().map(|(x0, y0, x1, y1)| PixelBox { x0, y0, x1, y1 }).collect();
        let inside = |x: u32, y: u32| boxes.iter().any(|b| {
            let (xa, xb) = (b.x0.min(b.x1).round(), b.x0.max(b.x1).round());
            let (ya, yb) = (b.y0.min(b.y1).round(), b.y0.max(b.y1).round());
            (xa..=xb).contains(&(x as f64)) && (ya..=yb).contains(&(y as f64))
        });
        let any = (0..w).any(|x| (0..h).any(|y| inside(x, y)));
        match boxes_to_mask(&boxes, w, h) {
            None => prop_assert!(!any),
            Some(m) => {
                prop_assert!(any);
                for (x, y, p) in m.enumerate_pixels() {
                    prop_assert_eq!(p.0[0] == 255, inside(x, y), "pixel ({}, {})", x, y);
                }
            }
        }
    }
}

const NAMES: [&str; 8] = ["plate", "flag", "table", "hat", "mug", "lighting", "sky", "dog"];

fn draft(names: &[&str]) -> DraftAnalysis {
    DraftAnalysis {
        identified_elements: IdentifiedElements {
            main_subjects: vec![MainSubject {
                name: "cupcake".into(),
                attributes: String::new(),
            }],
            references: None,
        },
        creativity_fills: CreativityFills::default(),
        ambiguous_elements: names
            .iter()
            .map(|n| AmbiguousElement {
                element: n.to_string(),
                reason: format!("the {n} is underspecified"),
                clarification_questions: vec![format!("What kind of {n}?")],
                resolution: Resolution::pending(),
            })
            .collect(),
        detailed_prompt: String::new(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn human_answers_take_precedence(
        picked in prop::sample::subsequence(NAMES.to_vec(), 1..=NAMES.len()),
        answered_mask in prop::collection::vec(any::<bool>(), NAMES.len()),
        level in prop_oneof![Just(CreativityLevel::Low), Just(CreativityLevel::Medium), Just(CreativityLevel::High)],
        salt in 0u32..1000,
    ) {
        let mocks = MockHandles::new(MockScoring::default(), SegmenterFallback::NotFound);
        let gw = Gateway::new(mocks.backend_set(), RetryPolicy::default(), TemplateSet::builtin());
        let prompt = format!("a cupcake with a {}", picked.join(" and a "));
        let request = GenerationRequest::new(prompt.clone(), level);
        let d = draft(&picked);
        let answers: Vec<ClarificationAnswer> = picked
            .iter()
            .zip(&answered_mask)
            .filter(|(_, on)| **on)
            .map(|(n, _)| ClarificationAnswer {
                element: n.to_uppercase(),
                answer: format!("  a very specific {n} #{salt}  "),
            })
            .collect();
        let trace = CallTrace::new();
        let rt = tokio::runtime::Builder::new_current_thread().build().unwrap();
        let report = rt.block_on(async {
            let resolved = resolve_ambiguities(&gw, &d, &request, &answers, &trace).await?;
            finalize_report(&gw, &resolved, &request, &trace).await
        }).unwrap();

        for a in &report.ambiguous_elements {
            let given = answers.iter().find(|x| x.element.eq_ignore_ascii_case(&a.element));
            match given {
                Some(g) => {
                    prop_assert_eq!(a.resolution.source, ResolutionSource::Human);
                    prop_assert_eq!(&a.resolution.answer, &g.answer);
                }
                None if level == CreativityLevel::Low => {
                    prop_assert_eq!(a.resolution.source, ResolutionSource::Literal);
                    prop_assert!(prompt.to_lowercase().contains(&a.resolution.answer.to_lowercase()));
                }
                None => {
                    prop_assert_eq!(a.resolution.source, ResolutionSource::ModelFill);
                    prop_assert!(!a.resolution.answer.trim().is_empty());
                }
            }
        }
        let resolve_calls = mocks.chat.calls_for("resolve_ambiguities");
        let all_answered = answers.len() == picked.len();
        prop_assert_eq!(resolve_calls, usize::from(level != CreativityLevel::Low && !all_answered));
    }
}
