//! Runnable demonstration programs exercising the whole stack end to end.
//!
//! Each demo builds a small process network, runs it to completion, and
//! returns its observable output as printable lines. The last line is always
//! a `RESULT:` summary; everything before it is one value (or one event) per
//! line. The demos double as integration scenarios: each one verifies its own
//! conservation invariant and fails loudly instead of printing wrong output.
//!
//! - [`primes`] — a sieve that folds over its own input channel, replacing
//!   the state with a filtered view of itself for every prime found.
//! - [`fibonacci`] — a write-branch selector producing the sequence on
//!   demand, stopped by a quit message; the final state rides out in the fold
//!   result.
//! - [`broadcast`] — one-to-many delivery over a chain of one-shot channels:
//!   the bus channel is replaced on every message, and each listener pump
//!   follows the chain at its own pace.
//! - [`bandwidth`] — an adaptive balancer that grows its output by merging in
//!   extra consumers when writes stall, refuses growth past a limit, and
//!   shrinks (deconstruct + close) when the input goes calm. Virtual time
//!   only, so the event log is reproducible byte for byte.
//! - [`zipper`] — a two-input transputer pairing values index-wise no matter
//!   which side arrives first.

use std::sync::{Arc, Mutex};
use std::time::Duration;

use crate::channels::{Channel, In, Out};
use crate::combinators::MergedOutput;
use crate::error::Failure;
use crate::runtime::{Eventual, Gopher};
use crate::select::{exit, proceed};
use crate::transputer::{Ports, Transputer};

/// First `n` primes, one per line, via the classic channel sieve.
///
/// A generator writes the naturals from 2 upward into a rendezvous channel.
/// A single selector folds over that channel with the *input endpoint itself*
/// as state: every value that survives the accumulated filters is a prime, is
/// reported, and wraps the state in one more `filter(x % p != 0)` layer. A
/// collector closes the number stream once it has `n` primes.
pub fn primes(g: &Gopher, n: u64) -> Result<Vec<String>, Failure> {
    if n == 0 {
        return Err(Failure::usage("primes requires n >= 1"));
    }
    // 2..=n*n always contains at least n primes, but the bound is re-derived
    // at runtime: if a range ever comes up short the generator is widened.
    let mut limit = (n * n).max(4);
    loop {
        if let Some(found) = sieve_up_to(g, n as usize, limit)? {
            let mut lines: Vec<String> = found.iter().map(|p| p.to_string()).collect();
            let last = *found.last().expect("n >= 1 primes collected");
            lines.push(format!("RESULT: n={n} last={last}"));
            return Ok(lines);
        }
        limit *= 2;
    }
}

/// One sieve run over `2..=limit`. Returns `None` if the range was exhausted
/// before `n` primes appeared.
fn sieve_up_to(g: &Gopher, n: usize, limit: u64) -> Result<Option<Vec<u64>>, Failure> {
    let numbers = g.rendezvous::<u64>();
    let found = g.growing::<u64>();

    let feed = numbers.output();
    g.spawn(async move {
        for i in 2..=limit {
            // The collector closes the channel once it has enough primes;
            // that is the generator's signal to stop early.
            if feed.write(i).await.is_err() {
                break;
            }
        }
        feed.close();
        Ok(())
    });

    let report = found.output();
    let sieve = g
        .select::<In<u64>, ()>()
        .on_read_from(
            |view: &In<u64>| view.clone(),
            move |p: u64, view: In<u64>| {
                let report = report.clone();
                async move {
                    report.awrite(p).await?;
                    proceed(view.filter(move |&x| x % p != 0))
                }
            },
        )
        .fold(numbers.input());
    let found_done = found.clone();
    sieve.on_complete(move |_| found_done.close());

    let collect_from = found.input();
    let numbers_brake = numbers.clone();
    let collector = g.spawn(async move {
        let mut primes = Vec::with_capacity(n);
        while primes.len() < n {
            match collect_from.read().await {
                Ok(p) => primes.push(p),
                Err(Failure::EndOfInput) => return Ok(None),
                Err(f) => return Err(f),
            }
        }
        numbers_brake.close();
        Ok(Some(primes))
    });
    g.block_on(collector)
}

/// The Fibonacci sequence on demand: a selector with a write branch that
/// offers the current element and a quit branch that ends the fold.
///
/// The consumer reads `count` values and then sends quit; the selector's
/// final state `(F(count), F(count+1))` becomes the fold result and is
/// reported on the `RESULT:` line.
pub fn fibonacci(g: &Gopher, count: u64) -> Result<Vec<String>, Failure> {
    if count == 0 {
        return Err(Failure::usage("fibonacci requires count >= 1"));
    }
    if count > 90 {
        return Err(Failure::usage("fibonacci count above 90 overflows u64"));
    }
    let values = g.rendezvous::<u64>();
    let quit = g.rendezvous::<bool>();

    let take_from = values.input();
    let quit_out = quit.output();
    let consumer = g.spawn(async move {
        let mut seen = Vec::with_capacity(count as usize);
        for _ in 0..count {
            seen.push(take_from.read().await?);
        }
        quit_out.write(true).await?;
        Ok(seen)
    });

    let generator = g
        .select::<(u64, u64), (u64, u64)>()
        .on_write(
            &values.output(),
            |s: &(u64, u64)| s.0,
            |s: (u64, u64)| async move { proceed((s.1, s.0 + s.1)) },
        )
        .on_read(&quit.input(), |_q: bool, s: (u64, u64)| async move { exit(s) })
        .fold((0, 1));

    let seen = g.block_on(consumer)?;
    let (x, y) = g.block_on(generator)?;
    let mut lines: Vec<String> = seen.iter().map(|v| v.to_string()).collect();
    lines.push(format!("RESULT: count={count} final=({x},{y})"));
    Ok(lines)
}

/// One bus node: the payload plus the channel where the *next* message will
/// appear. Nodes are one-shot channels, so every listener pump reads the same
/// envelope without consuming it and then follows `next`.
#[derive(Clone)]
struct Envelope {
    next: Channel<Envelope>,
    value: String,
}

/// One-to-many delivery: `k` listeners each receive all `m` messages in
/// publication order.
///
/// Listeners register by sending their transcript sink over a registration
/// channel. The broadcaster folds over (current bus node, messages sent):
/// each message is written into the current node together with a freshly made
/// next node, which becomes the new state. Registration spawns a pump that
/// folds over the chain, copying values into that listener's transcript.
pub fn broadcast(g: &Gopher, listeners: u64, messages: u64) -> Result<Vec<String>, Failure> {
    if listeners == 0 || messages == 0 {
        return Err(Failure::usage("broadcast requires listeners >= 1 and messages >= 1"));
    }
    let k = listeners as usize;
    let m = messages;

    let register = g.rendezvous::<Out<String>>();
    let publish = g.rendezvous::<String>();
    let transcripts: Vec<Channel<String>> = (0..k).map(|_| g.growing::<String>()).collect();

    let pumps: Arc<Mutex<Vec<Eventual<()>>>> = Arc::new(Mutex::new(Vec::new()));

    let g_reg = g.clone();
    let pumps_slot = pumps.clone();
    let g_pub = g.clone();
    let broadcaster = g
        .select::<(Channel<Envelope>, u64), ()>()
        .on_read(
            &register.input(),
            move |sink: Out<String>, (bus, sent): (Channel<Envelope>, u64)| {
                let pump = g_reg
                    .select::<Channel<Envelope>, ()>()
                    .on_read_from(
                        |node: &Channel<Envelope>| node.input(),
                        move |env: Envelope, _node| {
                            let sink = sink.clone();
                            async move {
                                sink.write(env.value).await?;
                                proceed(env.next)
                            }
                        },
                    )
                    .fold(bus.clone());
                pumps_slot.lock().unwrap().push(pump);
                async move { proceed((bus, sent)) }
            },
        )
        .on_read(
            &publish.input(),
            move |value: String, (bus, sent): (Channel<Envelope>, u64)| {
                let next = g_pub.one_shot::<Envelope>();
                async move {
                    bus.awrite(Envelope { next: next.clone(), value }).await?;
                    if sent + 1 == m {
                        // Nothing will ever be written into the final node;
                        // closing it lets every pump run off the chain's end.
                        next.close();
                        exit(())
                    } else {
                        proceed((next, sent + 1))
                    }
                }
            },
        )
        .fold((g.one_shot::<Envelope>(), 0));

    // Registration uses a rendezvous channel, so each write returns only
    // after the broadcaster has spawned that listener's pump: every listener
    // is in place before the first message goes out.
    let reg_out = register.output();
    let pub_out = publish.output();
    let sinks: Vec<Out<String>> = transcripts.iter().map(|t| t.output()).collect();
    let feeder = g.spawn(async move {
        for sink in sinks {
            reg_out.write(sink).await?;
        }
        for j in 1..=m {
            pub_out.write(format!("msg-{j}")).await?;
        }
        Ok(())
    });

    g.block_on(feeder)?;
    g.block_on(broadcaster)?;
    for pump in std::mem::take(&mut *pumps.lock().unwrap()) {
        match g.block_on(pump) {
            Ok(()) | Err(Failure::EndOfInput) => {}
            Err(f) => return Err(f),
        }
    }

    let expected: Vec<String> = (1..=m).map(|j| format!("msg-{j}")).collect();
    let mut lines = Vec::with_capacity(k * m as usize + 1);
    for (i, transcript) in transcripts.iter().enumerate() {
        let received = drain(g, transcript)?;
        if received != expected {
            return Err(Failure::msg(format!(
                "broadcast lost order for listener {i}: got {} of {} messages",
                received.len(),
                m
            )));
        }
        for v in received {
            lines.push(format!("{i}: {v}"));
        }
    }
    lines.push(format!(
        "RESULT: listeners={listeners} messages={messages} deliveries={}",
        k as u64 * m
    ));
    Ok(lines)
}

/// Closes `ch` and reads everything still buffered, in order.
fn drain<A: Clone + Send + 'static>(g: &Gopher, ch: &Channel<A>) -> Result<Vec<A>, Failure> {
    ch.close();
    let mut out = Vec::new();
    loop {
        match g.block_on(ch.aread()) {
            Ok(v) => out.push(v),
            Err(Failure::EndOfInput) => return Ok(out),
            Err(f) => return Err(f),
        }
    }
}

/// How long the balancer waits for a consumer before growing.
const WRITE_STALL: Duration = Duration::from_millis(10);
/// How long the input may stay silent before the balancer shrinks one level.
const CALM: Duration = Duration::from_millis(50);
/// How many extra consumers the control hands out before refusing.
const EXTRA_CONSUMERS: usize = 4;

/// The balancer's output state: the base consumer plus a stack of merge
/// levels, one per grow event. The current write target is the top of the
/// stack; shrinking pops a level, deconstructs the merge, and closes the
/// extra endpoint so its consumer winds down.
struct Band {
    base: Out<u64>,
    levels: Vec<(MergedOutput<u64>, Out<u64>)>,
}

impl Band {
    fn view(&self) -> Out<u64> {
        self.levels.last().map(|(merged, _)| merged.output()).unwrap_or_else(|| self.base.clone())
    }

    fn width(&self) -> usize {
        1 + self.levels.len()
    }

    fn grow(mut self, extra: Out<u64>) -> Band {
        let merged = self.view().merge(extra.clone());
        self.levels.push((merged, extra));
        self
    }

    fn shrink(mut self) -> Band {
        if let Some((merged, _)) = self.levels.pop() {
            let (_kept, retired) = merged.into_parts();
            retired.close();
        }
        self
    }
}

enum Attempt {
    Written,
    Stalled,
}

/// Adaptive bandwidth balancer under virtual time.
///
/// Tasks `0..tasks` flow through a balancer that forwards each one to its
/// current output. If a write stalls for [`WRITE_STALL`], the balancer asks
/// control for one more consumer: granted, the task goes straight to the new
/// consumer and the output grows by a merge; refused (after
/// [`EXTRA_CONSUMERS`] grants), it logs `Can't increase bandwidth` and waits
/// out the existing output, so no task is ever dropped. When the input stays
/// calm for [`CALM`], the output shrinks one level per round. Every consumer
/// takes `slow` per task; the returned lines are the grow/shrink/refusal
/// event log, reproducible byte for byte because the clock is virtual.
pub fn bandwidth(tasks: u64, slow: Duration) -> Result<Vec<String>, Failure> {
    if tasks == 0 {
        return Err(Failure::usage("bandwidth requires tasks >= 1"));
    }
    let g = Gopher::virtual_time();
    let delivered: Arc<Mutex<Vec<u64>>> = Arc::new(Mutex::new(Vec::new()));
    let events: Arc<Mutex<Vec<String>>> = Arc::new(Mutex::new(Vec::new()));

    let base = spawn_consumer(&g, &delivered, slow);
    let granted = Arc::new(Mutex::new(0usize));

    let input = g.rendezvous::<u64>();

    let g_fwd = g.clone();
    let delivered_fwd = delivered.clone();
    let events_fwd = events.clone();
    let events_calm = events.clone();
    let balancer = g
        .select::<Band, ()>()
        .on_read(&input.input(), move |task: u64, band: Band| {
            let g = g_fwd.clone();
            let delivered = delivered_fwd.clone();
            let events = events_fwd.clone();
            let granted = granted.clone();
            async move {
                let target = band.view();
                let attempt = g
                    .select::<(), Attempt>()
                    .on_write(&target, move |_s: &()| task, |_s| async { exit(Attempt::Written) })
                    .with_timeout(WRITE_STALL, |_s| async { exit(Attempt::Stalled) })
                    .fold(())
                    .await?;
                match attempt {
                    Attempt::Written => proceed(band),
                    Attempt::Stalled => {
                        let grant = {
                            let mut used = granted.lock().unwrap();
                            if *used < EXTRA_CONSUMERS {
                                *used += 1;
                                true
                            } else {
                                false
                            }
                        };
                        if grant {
                            let extra = spawn_consumer(&g, &delivered, slow);
                            extra.awrite(task).await?;
                            let band = band.grow(extra);
                            events.lock().unwrap().push(format!("grow: width={}", band.width()));
                            proceed(band)
                        } else {
                            events.lock().unwrap().push("Can't increase bandwidth".into());
                            band.view().awrite(task).await?;
                            proceed(band)
                        }
                    }
                }
            }
        })
        .with_timeout(CALM, move |band: Band| {
            let events = events_calm.clone();
            async move {
                if band.width() > 1 {
                    let band = band.shrink();
                    events.lock().unwrap().push(format!("shrink: width={}", band.width()));
                    proceed(band)
                } else {
                    proceed(band)
                }
            }
        })
        .fold(Band { base, levels: Vec::new() });

    let feed = input.output();
    let g_feed = g.clone();
    g.spawn(async move {
        for task in 0..tasks {
            feed.write(task).await?;
        }
        // A calm window long enough for every grown level to shrink away
        // before the input closes.
        g_feed.after(CALM * (EXTRA_CONSUMERS as u32 + 2)).await?;
        feed.close();
        Ok(())
    });

    match g.block_on(balancer) {
        Ok(()) | Err(Failure::EndOfInput) => {}
        Err(f) => return Err(f),
    }
    // Let in-flight consumers finish their last delay so the delivery ledger
    // is complete (virtual time: costs nothing on the wall clock).
    g.block_on(g.after(slow.max(Duration::from_millis(1)) * 2))?;

    let mut seen = delivered.lock().unwrap().clone();
    seen.sort_unstable();
    let all: Vec<u64> = (0..tasks).collect();
    if seen != all {
        return Err(Failure::msg(format!(
            "bandwidth lost or duplicated tasks: delivered {} of {tasks}",
            seen.len()
        )));
    }

    let mut lines = std::mem::take(&mut *events.lock().unwrap());
    let grows = lines.iter().filter(|l| l.starts_with("grow")).count();
    let shrinks = lines.iter().filter(|l| l.starts_with("shrink")).count();
    let refusals = lines.iter().filter(|l| l.starts_with("Can't")).count();
    lines.push(format!(
        "RESULT: tasks={tasks} delivered={} grows={grows} shrinks={shrinks} refusals={refusals}",
        seen.len()
    ));
    Ok(lines)
}

/// One consumer process: reads tasks from a fresh rendezvous channel,
/// records each receipt, then pauses `slow` to model its working pace.
fn spawn_consumer(g: &Gopher, delivered: &Arc<Mutex<Vec<u64>>>, slow: Duration) -> Out<u64> {
    let ch = g.rendezvous::<u64>();
    let take = ch.input();
    let g2 = g.clone();
    let ledger = delivered.clone();
    g.spawn(async move {
        loop {
            match take.read().await {
                Ok(task) => {
                    ledger.lock().unwrap().push(task);
                    if slow > Duration::ZERO {
                        g2.after(slow).await?;
                    }
                }
                Err(_) => return Ok(()),
            }
        }
    });
    ch.output()
}

/// Pairs two generated streams index-wise through a two-input transputer.
///
/// The inputs are deterministic pseudo-random sequences (same seed every
/// run), so the output is reproducible and checked here against a plain
/// index-wise zip of the generated values.
pub fn zipper(g: &Gopher, count: u64) -> Result<Vec<String>, Failure> {
    let xs = pseudo_random_values(1, count);
    let ys = pseudo_random_values(2, count);

    let t = Transputer::define("zipper")
        .in_port::<u64>("x")
        .in_port::<u64>("y")
        .out_port::<(u64, u64)>("out")
        .stateless()
        .on_read("x", |p: Ports, v: u64, _s: ()| async move {
            let w = p.reader::<u64>("y")?.aread().await?;
            p.writer::<(u64, u64)>("out")?.awrite((v, w)).await?;
            proceed(())
        })
        .on_read("y", |p: Ports, w: u64, _s: ()| async move {
            let v = p.reader::<u64>("x")?.aread().await?;
            p.writer::<(u64, u64)>("out")?.awrite((v, w)).await?;
            proceed(())
        })
        .build()
        .map_err(|e| Failure::usage(e.to_string()))?;

    let x_ch = g.growing::<u64>();
    let y_ch = g.growing::<u64>();
    let out = g.growing::<(u64, u64)>();
    t.bind_in("x", x_ch.input()).map_err(|e| Failure::usage(e.to_string()))?;
    t.bind_in("y", y_ch.input()).map_err(|e| Failure::usage(e.to_string()))?;
    t.bind_out("out", out.output()).map_err(|e| Failure::usage(e.to_string()))?;
    let mut running = t.start(g).map_err(|e| Failure::usage(e.to_string()))?;

    for &x in &xs {
        g.block_on(x_ch.awrite(x))?;
    }
    for &y in &ys {
        g.block_on(y_ch.awrite(y))?;
    }
    x_ch.close();
    y_ch.close();
    match g.block_on(running.completion()) {
        Ok(()) | Err(Failure::EndOfInput) => {}
        Err(f) => return Err(f),
    }

    let pairs = drain(g, &out)?;
    let expected: Vec<(u64, u64)> =
        xs.iter().copied().zip(ys.iter().copied()).collect();
    if pairs != expected {
        return Err(Failure::msg(format!(
            "zipper misaligned: produced {} of {count} pairs",
            pairs.len()
        )));
    }
    let mut lines: Vec<String> = pairs.iter().map(|(x, y)| format!("({x},{y})")).collect();
    lines.push(format!("RESULT: pairs={}", pairs.len()));
    Ok(lines)
}

/// SplitMix64 stream, reduced to 0..1000 for readable output. Fixed seeds
/// keep every run identical.
fn pseudo_random_values(seed: u64, count: u64) -> Vec<u64> {
    let mut state = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    (0..count)
        .map(|_| {
            state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
            (z ^ (z >> 31)) % 1000
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn values(lines: &[String]) -> Vec<String> {
        lines[..lines.len() - 1].to_vec()
    }

    fn result_line(lines: &[String]) -> &str {
        lines.last().expect("demo output ends with a RESULT line")
    }

    #[test]
    fn primes_first_ten() {
        let g = Gopher::deterministic();
        let lines = primes(&g, 10).unwrap();
        assert_eq!(values(&lines), ["2", "3", "5", "7", "11", "13", "17", "19", "23", "29"]);
        assert_eq!(result_line(&lines), "RESULT: n=10 last=29");
    }

    #[test]
    fn primes_single() {
        let g = Gopher::deterministic();
        let lines = primes(&g, 1).unwrap();
        assert_eq!(values(&lines), ["2"]);
        assert_eq!(result_line(&lines), "RESULT: n=1 last=2");
    }

    #[test]
    fn primes_hundredth_is_541() {
        let g = Gopher::deterministic();
        let lines = primes(&g, 100).unwrap();
        assert_eq!(lines.len(), 101);
        assert_eq!(values(&lines)[99], "541");
        assert_eq!(result_line(&lines), "RESULT: n=100 last=541");
    }

    #[test]
    fn primes_zero_is_a_usage_error() {
        let g = Gopher::deterministic();
        assert!(matches!(primes(&g, 0), Err(Failure::Usage(_))));
    }

    #[test]
    fn primes_deterministic_mode_is_reproducible() {
        let first = primes(&Gopher::deterministic(), 25).unwrap();
        let second = primes(&Gopher::deterministic(), 25).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn default_generator_bound_suffices_for_small_n() {
        // The widening fallback in `primes` should never trigger: 2..=max(n*n,4)
        // already contains at least n primes. Checked against a sieve oracle.
        let top = 400u64 * 400;
        let mut is_composite = vec![false; (top + 1) as usize];
        let mut count_upto = vec![0usize; (top + 1) as usize];
        let mut count = 0;
        for c in 2..=top as usize {
            if !is_composite[c] {
                count += 1;
                let mut multiple = c * c;
                while multiple <= top as usize {
                    is_composite[multiple] = true;
                    multiple += c;
                }
            }
            count_upto[c] = count;
        }
        for n in 1u64..=400 {
            let limit = (n * n).max(4);
            assert!(
                count_upto[limit as usize] >= n as usize,
                "2..={limit} holds fewer than {n} primes"
            );
        }
    }

    #[test]
    fn primes_agree_with_trial_division() {
        let g = Gopher::deterministic();
        let lines = primes(&g, 50).unwrap();
        let got: Vec<u64> = values(&lines).iter().map(|l| l.parse().unwrap()).collect();
        let mut expected = Vec::new();
        let mut candidate = 2u64;
        while expected.len() < 50 {
            if (2..candidate).take_while(|d| d * d <= candidate).all(|d| candidate % d != 0) {
                expected.push(candidate);
            }
            candidate += 1;
        }
        assert_eq!(got, expected);
    }

    #[test]
    fn fibonacci_seven_values_and_final_state() {
        let g = Gopher::deterministic();
        let lines = fibonacci(&g, 7).unwrap();
        assert_eq!(values(&lines), ["0", "1", "1", "2", "3", "5", "8"]);
        assert_eq!(result_line(&lines), "RESULT: count=7 final=(13,21)");
    }

    #[test]
    fn fibonacci_single_value() {
        let g = Gopher::deterministic();
        let lines = fibonacci(&g, 1).unwrap();
        assert_eq!(values(&lines), ["0"]);
        assert_eq!(result_line(&lines), "RESULT: count=1 final=(1,1)");
    }

    #[test]
    fn fibonacci_two_values() {
        let g = Gopher::deterministic();
        let lines = fibonacci(&g, 2).unwrap();
        assert_eq!(values(&lines), ["0", "1"]);
    }

    #[test]
    fn fibonacci_matches_recurrence_oracle() {
        let g = Gopher::deterministic();
        let lines = fibonacci(&g, 20).unwrap();
        let mut expected = vec![0u64, 1];
        while expected.len() < 22 {
            expected.push(expected[expected.len() - 1] + expected[expected.len() - 2]);
        }
        let got: Vec<u64> = values(&lines).iter().map(|l| l.parse().unwrap()).collect();
        assert_eq!(got, expected[..20]);
        assert_eq!(result_line(&lines), format!("RESULT: count=20 final=({},{})", expected[20], expected[21]));
    }

    #[test]
    fn broadcast_one_listener_one_message() {
        let g = Gopher::deterministic();
        let lines = broadcast(&g, 1, 1).unwrap();
        assert_eq!(values(&lines), ["0: msg-1"]);
        assert_eq!(result_line(&lines), "RESULT: listeners=1 messages=1 deliveries=1");
    }

    #[test]
    fn broadcast_three_listeners_see_identical_transcripts() {
        let g = Gopher::deterministic();
        let lines = broadcast(&g, 3, 5).unwrap();
        let expected: Vec<String> =
            (0..3).flat_map(|i| (1..=5).map(move |j| format!("{i}: msg-{j}"))).collect();
        assert_eq!(values(&lines), expected);
        assert_eq!(result_line(&lines), "RESULT: listeners=3 messages=5 deliveries=15");
    }

    #[test]
    fn broadcast_works_threaded() {
        let g = Gopher::threaded(4).unwrap();
        let lines = broadcast(&g, 5, 20).unwrap();
        assert_eq!(result_line(&lines), "RESULT: listeners=5 messages=20 deliveries=100");
    }

    #[test]
    fn bandwidth_fast_consumer_never_grows() {
        let lines = bandwidth(10, Duration::ZERO).unwrap();
        assert_eq!(lines, ["RESULT: tasks=10 delivered=10 grows=0 shrinks=0 refusals=0"]);
    }

    #[test]
    fn bandwidth_slow_consumer_grows_then_shrinks() {
        let lines = bandwidth(40, Duration::from_millis(60)).unwrap();
        let grows = lines.iter().filter(|l| l.starts_with("grow")).count();
        let shrinks = lines.iter().filter(|l| l.starts_with("shrink")).count();
        assert!(grows >= 1, "expected at least one grow event: {lines:?}");
        assert!(shrinks >= 1, "expected at least one shrink event: {lines:?}");
        assert_eq!(grows, shrinks, "every grow is eventually shrunk away: {lines:?}");
        assert!(result_line(&lines).contains("delivered=40"));
    }

    #[test]
    fn bandwidth_refusal_still_delivers_everything() {
        let lines = bandwidth(40, Duration::from_millis(200)).unwrap();
        assert!(
            lines.iter().any(|l| l == "Can't increase bandwidth"),
            "expected the refusal path to fire: {lines:?}"
        );
        assert!(result_line(&lines).contains("delivered=40"));
    }

    #[test]
    fn bandwidth_event_log_is_reproducible() {
        let first = bandwidth(30, Duration::from_millis(60)).unwrap();
        let second = bandwidth(30, Duration::from_millis(60)).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn zipper_pairs_follow_the_generated_streams() {
        let g = Gopher::deterministic();
        let lines = zipper(&g, 5).unwrap();
        let xs = pseudo_random_values(1, 5);
        let ys = pseudo_random_values(2, 5);
        let expected: Vec<String> =
            xs.iter().zip(ys.iter()).map(|(x, y)| format!("({x},{y})")).collect();
        assert_eq!(values(&lines), expected);
        assert_eq!(result_line(&lines), "RESULT: pairs=5");
    }

    #[test]
    fn zipper_empty_inputs_produce_no_pairs() {
        let g = Gopher::deterministic();
        let lines = zipper(&g, 0).unwrap();
        assert_eq!(lines, ["RESULT: pairs=0"]);
    }

    #[test]
    fn zipper_thousand_pairs_match_the_index_wise_zip() {
        let g = Gopher::deterministic();
        let lines = zipper(&g, 1000).unwrap();
        assert_eq!(lines.len(), 1001);
        let xs = pseudo_random_values(1, 1000);
        let ys = pseudo_random_values(2, 1000);
        for (i, line) in values(&lines).iter().enumerate() {
            assert_eq!(*line, format!("({},{})", xs[i], ys[i]));
        }
    }
}
