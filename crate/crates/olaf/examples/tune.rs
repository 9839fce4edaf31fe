use olaf::aom::ColdStart;
use olaf::sim::config::PhaseWalk;
use olaf::sim::*;
use olaf::types::*;

fn micro(discipline: DisciplineKind, out_gbps: f64, cstep: u64, width: u64, step: u64, seed: u64) -> Scenario {
    let mut s = single_switch_scenario(
        discipline, 8, (out_gbps * 1e9) as u64, 9, 3,
        SimDuration::from_nanos(922), SimTime::from_micros(470), seed,
    );
    s.topology.switches[0].out_prop_delay = SimDuration::from_nanos(50);
    let g = &mut s.topology.groups[0];
    g.ingress_delay = SimDuration::from_nanos(50);
    g.updates_per_worker = Some(500);
    g.cluster_phase_step = SimDuration::from_nanos(cstep);
    g.worker_phase_step = SimDuration::from_nanos(3);
    g.jitter = SimDuration::from_nanos(3);
    g.phase_walk = Some(PhaseWalk { width: SimDuration::from_nanos(width), step: SimDuration::from_nanos(step) });
    s
}

fn main() {
    for cstep in [0u64, 8, 12] {
        for width in [100u64, 120, 140] {
            for step in [8u64, 12, 16, 24] {
                let mut ok_all = true;
                let mut detail = String::new();
                for seed in [1u64, 7] {
                    let mut loss = vec![];
                    let mut aggs = vec![];
                    let mut means = vec![];
                    let mut p90s = vec![];
                    let mut reds = vec![];
                    for gbps in [40.0, 20.0, 5.0] {
                        let f = run(&micro(DisciplineKind::Fifo, gbps, cstep, width, step, seed), LogMode::Digest).unwrap().metrics;
                        let o = run(&micro(DisciplineKind::Olaf, gbps, cstep, width, step, seed), LogMode::Digest).unwrap().metrics;
                        let fa = f.mean_avg_aom(ColdStart::AgeFromZero);
                        let oa = o.mean_avg_aom(ColdStart::AgeFromZero);
                        loss.push((f.loss_pct(), o.loss_pct()));
                        aggs.push(o.total().aggregated);
                        means.push(o.mean_agg_per_delivery());
                        p90s.push(o.agg_per_delivery_quantile(0.9));
                        reds.push((1.0 - oa / fa) * 100.0);
                    }
                    let ok = (45.8..=65.8).contains(&loss[0].0)
                        && (6.0..=16.0).contains(&loss[0].1)
                        && (64.3..=84.3).contains(&loss[1].0)
                        && (6.5..=16.5).contains(&loss[1].1)
                        && aggs[1] > aggs[0]
                        && reds[0] >= 60.0
                        && reds[1] >= 70.0
                        && means[1] > means[0] && means[2] > means[1]
                        && p90s[1] >= p90s[0] && p90s[2] > p90s[1];
                    ok_all &= ok;
                    if seed == 1 {
                        detail = format!(
                            "f40 {:4.1} o40 {:4.1} f20 {:4.1} o20 {:4.1} red {:4.1}/{:4.1} agg {}/{}/{} p90 {}/{}/{}",
                            loss[0].0, loss[0].1, loss[1].0, loss[1].1, reds[0], reds[1],
                            aggs[0], aggs[1], means[2].round(), p90s[0], p90s[1], p90s[2]
                        );
                    }
                }
                println!("c{cstep:2} w{width:3} s{step:2}: {} {detail}", if ok_all { "PASS" } else { "    " });
            }
        }
    }
}
