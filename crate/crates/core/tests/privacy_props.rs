mod common;

use common::oracles::{random_box, random_store};
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use xros_core::display::RenderItem;
use xros_core::geometry::Aabb;
use xros_core::ids::{AppId, PlacementId};
use xros_core::privacy::{
    filter_input, filter_output, gate_network_share, PolicySet, PrivacyError, RuleAction, RuleMatch, SensorFrame, UserContext,
    UserRule,
};
use xros_core::world_model::{DisplayPriority, Sensitivity, WorldElement};

const LABELS: [&str; 4] = ["face", "screen", "document", "plant"];

fn elements(rng: &mut ChaCha8Rng, n: usize) -> Vec<WorldElement> {
    let mut els = random_store(rng, n, 5.0);
    for e in &mut els {
        if rng.random_bool(0.1) {
            e.sensitivity = Sensitivity::Bystander;
        }
        if rng.random_bool(0.4) {
            e.labels.push(LABELS[rng.random_range(0..LABELS.len())].into());
        }
    }
    els
}

fn random_rule(rng: &mut ChaCha8Rng) -> UserRule {
    let matcher = if rng.random_bool(0.5) {
        RuleMatch::Label(LABELS[rng.random_range(0..LABELS.len())].into())
    } else {
        RuleMatch::Tag([Sensitivity::None, Sensitivity::Private][rng.random_range(0..2)])
    };
    let action = [RuleAction::Allow, RuleAction::Redact, RuleAction::Drop][rng.random_range(0..3)];
    UserRule { matcher, action }
}

fn setup(seed: u64, n: usize) -> (SensorFrame, PolicySet, ChaCha8Rng) {
    let mut rng = common::rng(seed);
    let elements = elements(&mut rng, n);
    let bystanders = (0..rng.random_range(0..3)).map(|_| random_box(&mut rng, 5.0, 1.0)).collect();
    let user_rules = (0..rng.random_range(0..5)).map(|_| random_rule(&mut rng)).collect();
    let policy = PolicySet { user_rules, ..PolicySet::default() };
    (SensorFrame { elements, bystanders, context: UserContext::Stationary }, policy, rng)
}

fn render_items(rng: &mut ChaCha8Rng, n: usize) -> Vec<RenderItem> {
    (0..n)
        .map(|i| RenderItem {
            placement: PlacementId(i as u32),
            app: AppId(rng.random_range(1..4)),
            priority: [DisplayPriority::Safety, DisplayPriority::Normal, DisplayPriority::Ambient][rng.random_range(0..3)],
            bounds: random_box(rng, 3.0, 0.5),
            relevance: rng.random(),
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn input_filter_removes_every_bystander(seed in any::<u64>(), n in 0usize..60) {
        let (frame, policy, _) = setup(seed, n);
        let (out, audit) = filter_input(&frame, &policy);
        for e in &out.elements {
            prop_assert!(e.sensitivity != Sensitivity::Bystander);
            prop_assert!(frame.bystanders.iter().all(|r| !r.intersects(&e.extent)));
            prop_assert!(frame.elements.iter().any(|x| x.id == e.id));
        }
        prop_assert!(out.elements.len() <= frame.elements.len());
        let dropped = frame.elements.len() - out.elements.len();
        prop_assert!(audit.len() >= dropped);
    }

    #[test]
    fn input_filter_is_idempotent(seed in any::<u64>(), n in 0usize..60) {
        let (frame, policy, _) = setup(seed, n);
        let (once, _) = filter_input(&frame, &policy);
        let (twice, _) = filter_input(&once, &policy);
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn a_drop_rule_never_adds_output(seed in any::<u64>(), n in 0usize..60, at in any::<prop::sample::Index>()) {
        let (frame, policy, mut rng) = setup(seed, n);
        let before = filter_input(&frame, &policy).0.elements.len();
        let mut stricter = policy.clone();
        let rule = UserRule { action: RuleAction::Drop, ..random_rule(&mut rng) };
        stricter.user_rules.insert(at.index(policy.user_rules.len() + 1), rule);
        prop_assert!(filter_input(&frame, &stricter).0.elements.len() <= before);
    }

    #[test]
    fn safety_output_survives_any_policy(seed in any::<u64>(), n in 0usize..40, ctx in 0usize..4) {
        let (_, mut policy, mut rng) = setup(seed, 0);
        let items = render_items(&mut rng, n);
        let objects: Vec<Aabb> = (0..rng.random_range(0..4)).map(|_| random_box(&mut rng, 3.0, 1.0)).collect();
        policy.context_rules.push(xros_core::privacy::ContextRule {
            context: UserContext::Walking,
            suppress: vec![DisplayPriority::Ambient, DisplayPriority::Safety],
        });
        let context = [UserContext::Driving, UserContext::Walking, UserContext::Stationary, UserContext::parse("Cycling")][ctx].clone();
        let (out, _) = filter_output(&items, &context, &policy, &objects);
        for s in items.iter().filter(|i| i.priority == DisplayPriority::Safety) {
            prop_assert!(out.contains(s));
        }
        for o in out.iter().filter(|i| i.priority != DisplayPriority::Safety) {
            prop_assert!(objects.iter().all(|b| !b.overlaps(&o.bounds)));
        }
        if context == UserContext::Driving {
            prop_assert!(out.iter().all(|i| i.priority == DisplayPriority::Safety));
        }
    }

    #[test]
    fn gate_withholds_exactly_private(seed in any::<u64>(), n in 0usize..60, share in any::<bool>()) {
        let mut rng = common::rng(seed);
        let els = random_store(&mut rng, n, 5.0);
        let policy = PolicySet { data_share_ok: share, ..PolicySet::default() };
        let (out, audit) = gate_network_share(&els, &policy).unwrap();
        let private = els.iter().filter(|e| e.sensitivity == Sensitivity::Private).count();
        prop_assert_eq!(out.len(), if share { n } else { n - private });
        prop_assert_eq!(audit.len(), n - out.len());
    }
}

#[test]
fn gate_example_two_of_five_private() {
    let mut els = random_store(&mut common::rng(3), 5, 5.0);
    for (i, e) in els.iter_mut().enumerate() {
        e.sensitivity = if i < 2 { Sensitivity::Private } else { Sensitivity::None };
    }
    let policy = PolicySet { data_share_ok: false, ..PolicySet::default() };
    assert_eq!(gate_network_share(&els, &policy).unwrap().0.len(), 3);
    els[4].sensitivity = Sensitivity::Bystander;
    assert_eq!(gate_network_share(&els, &policy), Err(PrivacyError::TaintViolation(els[4].id)));
}

#[test]
fn driving_keeps_only_safety() {
    let items = render_items(&mut common::rng(8), 30);
    let (out, _) = filter_output(&items, &UserContext::Driving, &PolicySet::default(), &[]);
    let safety: Vec<_> = items.iter().filter(|i| i.priority == DisplayPriority::Safety).cloned().collect();
    assert!(!safety.is_empty());
    assert_eq!(out, safety);
}
