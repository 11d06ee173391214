//! Reference implementations written independently of the library, plus the
//! random generators that feed them. Shared by the integration tests and the
//! acceptance run.
#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use xros_core::geometry::{Aabb, Frustum, Pose, Vec3};
use xros_core::ids::ElementId;
use xros_core::offloading::{
    DeviceSpec, NetworkSpec, NetworkType, Placement, Profile, ServerSpec, TaskSpec, Tier, UserPrefs,
};
use xros_core::privacy::Clearance;
use xros_core::world_model::{ElementKind, Sensitivity, WorldElement};

// ---------------------------------------------------------------- geometry

pub fn random_box(rng: &mut ChaCha8Rng, span: f64, max_half: f64) -> Aabb {
    let c = [rng.random_range(-span..span), rng.random_range(-span..span), rng.random_range(-span..span)];
    let h = [rng.random_range(0.01..max_half), rng.random_range(0.01..max_half), rng.random_range(0.01..max_half)];
    Aabb::from_center(c, h)
}

fn boxes_touch(a: &Aabb, b: &Aabb) -> bool {
    a.min[0] <= b.max[0]
        && b.min[0] <= a.max[0]
        && a.min[1] <= b.max[1]
        && b.min[1] <= a.max[1]
        && a.min[2] <= b.max[2]
        && b.min[2] <= a.max[2]
}

fn boxes_share_volume(a: &Aabb, b: &Aabb) -> bool {
    (0..3).all(|i| a.max[i].min(b.max[i]) - a.min[i].max(b.min[i]) > 0.0)
}

// ------------------------------------------------------------- world model

/// A version of element `id` whose content is a pure function of
/// `(id, timestamp, source)`, so equal keys always mean equal content.
pub fn version(id: u64, timestamp: u64, source: &str) -> WorldElement {
    let mut h = id.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ timestamp.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    for b in source.bytes() {
        h = h.rotate_left(7) ^ u64::from(b);
    }
    let f = |k: u32| ((h >> k) & 0xff) as f64 / 32.0;
    let kind = ElementKind::ALL[(h % 4) as usize];
    let extent = Aabb::from_center([f(0), f(8), f(16)], [0.1 + f(24) / 20.0; 3]);
    WorldElement::new(id, kind, extent, source, timestamp)
}

/// A random device model: ids from a small pool so that models collide.
pub fn random_model(rng: &mut ChaCha8Rng, max_len: usize, id_pool: u64) -> Vec<WorldElement> {
    let n = rng.random_range(0..=max_len);
    let mut by_id = BTreeMap::new();
    for _ in 0..n {
        let id = rng.random_range(0..id_pool);
        let ts = rng.random_range(0..6);
        let src = ["dev-a", "dev-b", "dev-c"][rng.random_range(0..3)];
        by_id.insert(id, version(id, ts, src));
    }
    by_id.into_values().collect()
}

/// Merge by brute force: for every id, the version with the latest timestamp,
/// then the smallest source. Content is keyed by both, see [`version`].
pub fn merge_oracle(models: &[Vec<WorldElement>]) -> Vec<WorldElement> {
    let mut all: Vec<&WorldElement> = models.iter().flatten().collect();
    all.sort_by(|a, b| a.id.cmp(&b.id).then(b.timestamp.cmp(&a.timestamp)).then(a.source.cmp(&b.source)));
    let mut out: Vec<WorldElement> = Vec::new();
    for e in all {
        if out.last().is_none_or(|l| l.id != e.id) {
            out.push(e.clone());
        }
    }
    out
}

pub fn random_store(rng: &mut ChaCha8Rng, n: usize, span: f64) -> Vec<WorldElement> {
    (0..n as u64)
        .map(|id| {
            let kind = ElementKind::ALL[rng.random_range(0..4)];
            let extent = random_box(rng, span, 1.5);
            let sens = if rng.random_bool(0.2) { Sensitivity::Private } else { Sensitivity::None };
            WorldElement::new(id, kind, extent, "cam", 0).with_sensitivity(sens)
        })
        .collect()
}

/// Linear scan over the whole store.
pub fn query_oracle(store: &[WorldElement], region: &Aabb, kinds: &[ElementKind], clearance: Clearance) -> Vec<ElementId> {
    let mut ids: Vec<ElementId> = store
        .iter()
        .filter(|e| kinds.contains(&e.kind))
        .filter(|e| boxes_touch(&e.extent, region))
        .filter(|e| match e.sensitivity {
            Sensitivity::None => true,
            Sensitivity::Private => clearance == Clearance::Private,
            Sensitivity::Bystander => false,
        })
        .map(|e| e.id)
        .collect();
    ids.sort();
    ids
}

/// Pairwise check written from scratch.
pub fn pairwise_disjoint(boxes: &[(u32, Aabb)]) -> bool {
    for i in 0..boxes.len() {
        for j in i + 1..boxes.len() {
            if boxes[i].0 != boxes[j].0 && boxes_share_volume(&boxes[i].1, &boxes[j].1) {
                return false;
            }
        }
    }
    true
}

// ----------------------------------------------------------------- display

fn in_pyramid(f: &Frustum, dir: &Vec3) -> bool {
    let l = f.eye.orientation.inverse_transform_vector(dir);
    l.z < 0.0 && l.x.abs() <= -l.z * f.half_h.tan() && l.y.abs() <= -l.z * f.half_v.tan()
}

/// Directions drawn uniformly by solid angle inside the view pyramid.
pub fn pyramid_rays(f: &Frustum, n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec3> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        // Marsaglia: uniform on the sphere
        let (a, b): (f64, f64) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let s = a * a + b * b;
        if s >= 1.0 {
            continue;
        }
        let k = 2.0 * (1.0 - s).sqrt();
        let d = Vec3::new(a * k, b * k, 1.0 - 2.0 * s);
        if in_pyramid(f, &d) {
            out.push(d);
        }
    }
    out
}

/// Fraction of `rays` inside the union of the boxes' bounding cones.
pub fn cone_coverage_mc(boxes: &[Aabb], eye: &Pose, rays: &[Vec3]) -> f64 {
    let cones: Vec<Option<(Vec3, f64)>> = boxes
        .iter()
        .map(|b| {
            let c = Vec3::new((b.min[0] + b.max[0]) / 2.0, (b.min[1] + b.max[1]) / 2.0, (b.min[2] + b.max[2]) / 2.0);
            let r = Vec3::new(b.max[0] - b.min[0], b.max[1] - b.min[1], b.max[2] - b.min[2]).norm() / 2.0;
            let to = c - eye.position;
            let d = to.norm();
            if d <= r {
                None
            } else {
                Some((to / d, (r / d).asin()))
            }
        })
        .collect();
    let hit = rays
        .iter()
        .filter(|d| {
            cones.iter().any(|c| match c {
                None => true,
                Some((axis, half)) => d.angle(axis) <= *half,
            })
        })
        .count();
    hit as f64 / rays.len() as f64
}

fn ray_box(origin: &Vec3, d: &Vec3, b: &Aabb) -> bool {
    let (mut lo, mut hi) = (0.0_f64, f64::MAX);
    for i in 0..3 {
        if d[i] == 0.0 {
            if origin[i] < b.min[i] || origin[i] > b.max[i] {
                return false;
            }
        } else {
            let (t0, t1) = ((b.min[i] - origin[i]) / d[i], (b.max[i] - origin[i]) / d[i]);
            lo = lo.max(t0.min(t1));
            hi = hi.min(t0.max(t1));
        }
    }
    lo <= hi
}

/// Fraction of `rays` that hit any of the boxes themselves.
pub fn box_coverage_mc(boxes: &[Aabb], eye: &Pose, rays: &[Vec3]) -> f64 {
    let hit = rays.iter().filter(|d| boxes.iter().any(|b| ray_box(&eye.position, d, b))).count();
    hit as f64 / rays.len() as f64
}

// -------------------------------------------------------------- offloading

pub fn random_profile(rng: &mut ChaCha8Rng) -> (Profile, Vec<String>) {
    let kinds = [NetworkType::G3, NetworkType::Lte, NetworkType::WiFi, NetworkType::G5];
    let n_servers = rng.random_range(0..6);
    let mut servers: Vec<ServerSpec> = Vec::new();
    for i in 0..n_servers {
        let twin = i > 0 && rng.random_bool(0.15);
        let s = if twin {
            ServerSpec { id: format!("s{i}"), ..servers[i - 1].clone() }
        } else {
            ServerSpec {
                id: format!("s{i}"),
                tier: if rng.random_bool(0.3) { Tier::Cloud } else { Tier::Edge },
                cpu_factor: rng.random_range(0.5..8.0),
                load: if rng.random_bool(0.1) { 1.0 } else { rng.random_range(0.0..0.95) },
                mem_free_bytes: if rng.random_bool(0.3) { None } else { Some(rng.random_range(0..4_000_000)) },
                extra_latency_us: if rng.random_bool(0.5) { 0 } else { rng.random_range(0..80_000) },
            }
        };
        servers.push(s);
    }
    servers.shuffle(rng);
    let mut available: Vec<String> = servers.iter().filter(|_| rng.random_bool(0.8)).map(|s| s.id.clone()).collect();
    available.shuffle(rng);
    let profile = Profile {
        network: NetworkSpec {
            kind: kinds[rng.random_range(0..4)],
            bandwidth_bps: rng.random_range(500_000..500_000_000),
            latency_us: rng.random_range(0..100_000),
        },
        device: DeviceSpec {
            cpu_factor: rng.random_range(0.25..2.0),
            battery_frac: rng.random_range(0.0..=1.0),
            storage_free_bytes: 1 << 34,
            mem_free_bytes: 1 << 32,
        },
        user: UserPrefs { confidential_tasks_local_only: rng.random_bool(0.5), data_share_ok: rng.random_bool(0.5) },
        task: TaskSpec {
            exec_us_local: rng.random_range(1_000..400_000),
            payload_bytes: rng.random_range(0..2_000_000),
            result_bytes: rng.random_range(0..200_000),
            deadline_us: rng.random_range(10_000..500_000),
            confidential: rng.random_bool(0.3),
        },
        servers,
    };
    (profile, available)
}

/// Completion time of `placement`, or `None` when it cannot run there.
pub fn cost_oracle(p: &Profile, placement: &Placement) -> Option<u64> {
    let t = &p.task;
    let Some(id) = placement.server_id() else {
        return Some((t.exec_us_local as f64 / p.device.cpu_factor).ceil() as u64);
    };
    let s = p.servers.iter().find(|s| s.id == id)?;
    let blocked = (t.confidential && p.user.confidential_tasks_local_only)
        || matches!(s.mem_free_bytes, Some(m) if t.payload_bytes > m)
        || s.cpu_factor * (1.0 - s.load) <= 0.0;
    if blocked {
        return None;
    }
    let bw = p.network.bandwidth_bps as f64;
    let one_way = (p.network.latency_us + s.extra_latency_us) as f64;
    let up = t.payload_bytes as f64 * 8.0 * 1e6 / bw;
    let down = t.result_bytes as f64 * 8.0 * 1e6 / bw;
    let exec = t.exec_us_local as f64 / (s.cpu_factor * (1.0 - s.load));
    Some((up + one_way + exec + down + one_way).ceil() as u64)
}

/// Enumerates every placement and takes the cheapest by (biased cost, Local
/// first, server id).
pub fn decide_oracle(p: &Profile, available: &[String]) -> Placement {
    let bias = if p.device.battery_frac < 0.2 { 0.8 } else { 1.0 };
    let mut options: Vec<(f64, u8, String, Placement)> = Vec::new();
    if let Some(c) = cost_oracle(p, &Placement::Local) {
        options.push((c as f64, 0, String::new(), Placement::Local));
    }
    for s in p.servers.iter().filter(|s| available.contains(&s.id)) {
        let pl = match s.tier {
            Tier::Edge => Placement::Edge(s.id.clone()),
            Tier::Cloud => Placement::Cloud(s.id.clone()),
        };
        if let Some(c) = cost_oracle(p, &pl) {
            options.push((c as f64 * bias, 1, s.id.clone(), pl));
        }
    }
    options.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    options.swap_remove(0).3
}

// ----------------------------------------------------------------- network

/// P(X > r) for X ~ Binomial(n, p), summed term by term.
pub fn binomial_tail(n: u64, p: f64, r: u64) -> f64 {
    let mut total = 0.0;
    for x in (r + 1)..=n {
        let mut c = 1.0;
        for i in 0..x {
            c = c * (n - i) as f64 / (i + 1) as f64;
        }
        total += c * p.powi(x as i32) * (1.0 - p).powi((n - x) as i32);
    }
    total
}

// ------------------------------------------------------------- interaction

pub fn zone_oracle(d: f64) -> &'static str {
    if d <= 0.45 {
        "intimate"
    } else if d <= 1.2 {
        "personal"
    } else if d <= 3.6 {
        "social"
    } else {
        "public"
    }
}

// --------------------------------------------------------------- scheduler

/// Budget safety and strict class dominance for one frame, checked from the
/// grants alone. Returns a description of the first broken rule.
pub fn frame_rule_breach(
    apps: &[xros_core::scheduler::AppProcess],
    sched: &xros_core::scheduler::FrameSchedule,
    interframe_us: u64,
) -> Option<String> {
    use xros_core::scheduler::{FovRelation, ProcState};
    let total: u64 = sched.grants.iter().map(|g| g.granted_us).sum();
    if total > interframe_us {
        return Some(format!("granted {total} > {interframe_us}"));
    }
    let runnable = apps.iter().filter(|a| a.state != ProcState::Suspended).count();
    if sched.grants.len() != runnable {
        return Some(format!("{} grants for {runnable} runnable apps", sched.grants.len()));
    }
    let rank = |c: FovRelation| match c {
        FovRelation::InView => 0,
        FovRelation::NearConcealed => 1,
        FovRelation::Far => 2,
    };
    for hi in &sched.grants {
        if hi.granted_us >= hi.requested_us {
            continue;
        }
        if let Some(lo) = sched.grants.iter().find(|g| rank(g.class) > rank(hi.class) && g.granted_us > 0) {
            return Some(format!("{:?} app {} got {} while {:?} app {} was short", lo.class, lo.app, lo.granted_us, hi.class, hi.app));
        }
    }
    None
}
