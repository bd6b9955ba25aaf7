//! Release gate: eleven end-to-end criteria, one test each.
//!
//! Every test prints one labeled `ACCEPTANCE NN <what>: PASS` line when its
//! criterion holds (visible with `cargo test --test acceptance -- --nocapture`;
//! the test name doubles as the label in the default report). A failed
//! criterion panics with a diagnostic, so the line is reported as FAILED.

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use gopher::demos;
use gopher::{exit, proceed, Channel, Failure, Gopher, In, PortPolicies, Ports, Transputer};

fn pass(k: u32, what: &str) {
    println!("ACCEPTANCE {k:02} {what}: PASS");
}

/// First `n` primes by trial division — the independent oracle.
fn first_primes(n: usize) -> Vec<u64> {
    let mut primes: Vec<u64> = Vec::with_capacity(n);
    let mut candidate = 2u64;
    while primes.len() < n {
        if primes.iter().take_while(|p| *p * *p <= candidate).all(|p| candidate % p != 0) {
            primes.push(candidate);
        }
        candidate += 1;
    }
    primes
}

/// Fibonacci prefix from F(0)=0, F(1)=1 — the independent oracle.
fn fib_prefix(len: usize) -> Vec<u64> {
    let mut f = vec![0u64, 1];
    while f.len() < len {
        f.push(f[f.len() - 1] + f[f.len() - 2]);
    }
    f.truncate(len);
    f
}

/// Reads `ch` to exhaustion after closing it.
fn drain<A: Clone + Send + 'static>(g: &Gopher, ch: &Channel<A>) -> Vec<A> {
    ch.close();
    let mut out = Vec::new();
    loop {
        match g.block_on(ch.aread()) {
            Ok(v) => out.push(v),
            Err(Failure::EndOfInput) => return out,
            Err(f) => panic!("unexpected failure while draining: {f}"),
        }
    }
}

#[test]
fn criterion_01_primes_cli_deterministic_and_correct() {
    let exe = env!("CARGO_BIN_EXE_gopher-demo");
    let mut outputs = Vec::new();
    for _ in 0..5 {
        let out = std::process::Command::new(exe)
            .args(["primes", "--n", "100", "--deterministic"])
            .output()
            .expect("demo binary is runnable");
        assert!(
            out.status.success(),
            "primes exited nonzero: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        outputs.push(String::from_utf8(out.stdout).expect("demo output is UTF-8"));
    }
    for run in &outputs[1..] {
        assert_eq!(run, &outputs[0], "deterministic runs must be byte-identical");
    }
    let lines: Vec<&str> = outputs[0].lines().collect();
    assert_eq!(lines.len(), 101, "100 primes plus one summary line");
    let got: Vec<u64> = lines[..100].iter().map(|l| l.parse().unwrap()).collect();
    assert_eq!(got, first_primes(100));
    assert_eq!(got[99], 541);
    assert_eq!(lines[100], "RESULT: n=100 last=541");
    pass(1, "primes CLI emits the first 100 primes ending in 541, byte-identical over 5 runs");
}

#[test]
fn criterion_02_fibonacci_matches_recurrence_oracle() {
    let g = Gopher::deterministic();
    let lines = demos::fibonacci(&g, 20).expect("fibonacci demo runs");
    let oracle = fib_prefix(22);
    let got: Vec<u64> = lines[..20].iter().map(|l| l.parse().unwrap()).collect();
    assert_eq!(got, oracle[..20], "emitted values follow the recurrence from (0, 1)");
    assert_eq!(
        lines[20],
        format!("RESULT: count=20 final=({},{})", oracle[20], oracle[21]),
        "final selector state is the next pair of the recurrence"
    );
    pass(2, "fibonacci write-branch selector matches the recurrence oracle incl. final state");
}

/// A reader that records each receipt at claim time: the completion callback
/// of `aread` fires inside the settlement, before the matched writer is told
/// its write completed. Re-arming inside the callback keeps one read parked
/// for the whole run.
struct ChainReader {
    take: In<usize>,
    received: Arc<Mutex<Vec<bool>>>,
    left: AtomicUsize,
}

fn arm(reader: Arc<ChainReader>) {
    if reader.left.load(Ordering::SeqCst) == 0 {
        return;
    }
    let next = reader.clone();
    reader.take.aread().on_complete(move |res| {
        let v = res.expect("the writer sends exactly as many values as the reader takes");
        next.received.lock().unwrap()[v] = true;
        if next.left.fetch_sub(1, Ordering::SeqCst) > 1 {
            arm(next);
        }
    });
}

#[test]
fn criterion_03_rendezvous_write_completes_only_after_receipt() {
    const TRANSFERS: usize = 10_000;
    let g = Gopher::deterministic();
    let ch = g.rendezvous::<usize>();

    let received = Arc::new(Mutex::new(vec![false; TRANSFERS]));
    arm(Arc::new(ChainReader {
        take: ch.input(),
        received: received.clone(),
        left: AtomicUsize::new(TRANSFERS),
    }));

    let put = ch.output();
    let received_w = received.clone();
    let writer = g.spawn(async move {
        let mut violations = 0usize;
        for i in 0..TRANSFERS {
            put.write(i).await?;
            // The moment a write reports completion, its value must already
            // have been claimed by a reader — rendezvous never buffers.
            if !received_w.lock().unwrap()[i] {
                violations += 1;
            }
        }
        Ok(violations)
    });

    let violations = g.block_on(writer).unwrap();
    assert_eq!(violations, 0, "a write must never complete before its value is claimed");
    assert!(received.lock().unwrap().iter().all(|&r| r), "every transfer was received");
    pass(3, "rendezvous: 10,000 transfers, zero write-completions before receipt");
}

#[test]
fn criterion_04_buffered_capacity_never_exceeded() {
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    for k in [1usize, 2, 8] {
        let g = Gopher::deterministic();
        let ch = g.buffered::<u64>(k);
        let mut rng = StdRng::seed_from_u64(1000 + k as u64);

        let writes_done = Arc::new(AtomicUsize::new(0));
        let reads_got: Arc<Mutex<Vec<u64>>> = Arc::new(Mutex::new(Vec::new()));
        let mut next = 0u64;

        for _ in 0..1000 {
            if rng.gen_bool(0.55) {
                let done = writes_done.clone();
                ch.awrite(next).on_complete(move |r| {
                    if r.is_ok() {
                        done.fetch_add(1, Ordering::SeqCst);
                    }
                });
                next += 1;
            } else {
                let got = reads_got.clone();
                ch.aread().on_complete(move |r| {
                    if let Ok(v) = r {
                        got.lock().unwrap().push(v);
                    }
                });
            }
            g.run_until_idle().unwrap();
            let w = writes_done.load(Ordering::SeqCst);
            let r = reads_got.lock().unwrap().len();
            assert!(w >= r, "reads cannot outpace completed writes");
            assert!(w - r <= k, "outstanding {} exceeds capacity {k}", w - r);
        }
        let got = reads_got.lock().unwrap().clone();
        let want: Vec<u64> = (0..got.len() as u64).collect();
        assert_eq!(got, want, "buffered delivery stays first-in first-out");
    }
    pass(4, "buffered(k in 1,2,8): 1,000 randomized ops each, outstanding never exceeds k");
}

#[test]
fn criterion_05_selector_fairness_and_mutual_exclusion() {
    const ROUNDS: usize = 1000;
    let g = Gopher::deterministic();
    let a = g.growing::<u64>();
    let b = g.growing::<u64>();
    for i in 0..ROUNDS as u64 {
        g.block_on(a.awrite(i)).unwrap();
        g.block_on(b.awrite(i)).unwrap();
    }

    let counts = Arc::new((AtomicUsize::new(0), AtomicUsize::new(0)));
    let in_body = Arc::new(AtomicUsize::new(0));
    let max_overlap = Arc::new(AtomicUsize::new(0));

    let enter = {
        let in_body = in_body.clone();
        let max_overlap = max_overlap.clone();
        move || {
            let now = in_body.fetch_add(1, Ordering::SeqCst) + 1;
            max_overlap.fetch_max(now, Ordering::SeqCst);
        }
    };
    let leave = {
        let in_body = in_body.clone();
        move || {
            in_body.fetch_sub(1, Ordering::SeqCst);
        }
    };

    let (enter_a, leave_a) = (enter.clone(), leave.clone());
    let (enter_b, leave_b) = (enter, leave);
    let (counts_a, counts_b) = (counts.clone(), counts.clone());
    let (g_a, g_b) = (g.clone(), g.clone());
    let selector = g
        .select::<usize, ()>()
        .on_read(&a.input(), move |_v: u64, rounds: usize| {
            let (enter, leave) = (enter_a.clone(), leave_a.clone());
            let counts = counts_a.clone();
            let g = g_a.clone();
            async move {
                enter();
                // Suspend mid-body: overlap would be visible right here.
                g.after(Duration::ZERO).await?;
                counts.0.fetch_add(1, Ordering::SeqCst);
                leave();
                if rounds + 1 == ROUNDS {
                    exit(())
                } else {
                    proceed(rounds + 1)
                }
            }
        })
        .on_read(&b.input(), move |_v: u64, rounds: usize| {
            let (enter, leave) = (enter_b.clone(), leave_b.clone());
            let counts = counts_b.clone();
            let g = g_b.clone();
            async move {
                enter();
                g.after(Duration::ZERO).await?;
                counts.1.fetch_add(1, Ordering::SeqCst);
                leave();
                if rounds + 1 == ROUNDS {
                    exit(())
                } else {
                    proceed(rounds + 1)
                }
            }
        })
        .fold(0);
    g.block_on(selector).unwrap();

    let picked_a = counts.0.load(Ordering::SeqCst);
    let picked_b = counts.1.load(Ordering::SeqCst);
    assert_eq!(picked_a + picked_b, ROUNDS);
    let diff = picked_a.abs_diff(picked_b);
    assert!(diff <= 1, "two always-ready branches drifted apart: {picked_a} vs {picked_b}");
    assert_eq!(max_overlap.load(Ordering::SeqCst), 1, "branch bodies must never overlap");
    pass(5, "selector: 1,000 rounds over two always-ready branches, pick diff <= 1, no body overlap");
}

#[test]
fn criterion_06_virtual_timeout_fires_exactly_on_deadline() {
    // A quiet round: the timeout fires at exactly its deadline.
    let g = Gopher::virtual_time();
    let quiet = g.rendezvous::<u64>();
    let fired_at: Arc<Mutex<Option<Duration>>> = Arc::new(Mutex::new(None));
    let fired_slot = fired_at.clone();
    let g_clock = g.clone();
    let waiting = g
        .select::<(), ()>()
        .on_read(&quiet.input(), |_v: u64, _s| async move { proceed(()) })
        .with_timeout(Duration::from_millis(10), move |_s| {
            let slot = fired_slot.clone();
            let now = g_clock.now();
            async move {
                *slot.lock().unwrap() = Some(now);
                exit(())
            }
        })
        .fold(());
    g.block_on(waiting).unwrap();
    assert_eq!(
        *fired_at.lock().unwrap(),
        Some(Duration::from_millis(10)),
        "timeout must fire exactly at its virtual deadline"
    );

    // A value arriving at 5ms wins the round; the 10ms timeout never fires.
    let g = Gopher::virtual_time();
    let ch = g.rendezvous::<u64>();
    let put = ch.output();
    let g_writer = g.clone();
    g.spawn(async move {
        g_writer.after(Duration::from_millis(5)).await?;
        put.write(7).await?;
        Ok(())
    });
    let timeout_fired = Arc::new(AtomicBool::new(false));
    let timeout_flag = timeout_fired.clone();
    let got_at: Arc<Mutex<Option<(u64, Duration)>>> = Arc::new(Mutex::new(None));
    let got_slot = got_at.clone();
    let g_clock = g.clone();
    let racing = g
        .select::<(), ()>()
        .on_read(&ch.input(), move |v: u64, _s| {
            let slot = got_slot.clone();
            let now = g_clock.now();
            async move {
                *slot.lock().unwrap() = Some((v, now));
                exit(())
            }
        })
        .with_timeout(Duration::from_millis(10), move |_s| {
            timeout_flag.store(true, Ordering::SeqCst);
            async move { exit(()) }
        })
        .fold(());
    g.block_on(racing).unwrap();
    assert_eq!(*got_at.lock().unwrap(), Some((7, Duration::from_millis(5))));
    assert!(!timeout_fired.load(Ordering::SeqCst), "a 5ms value must suppress a 10ms timeout");
    assert_eq!(g.now(), Duration::from_millis(5), "the clock never reaches the timeout deadline");
    pass(6, "virtual time: 10ms timeout fires at exactly 10ms; a 5ms value suppresses it");
}

#[test]
fn criterion_07_broadcast_delivers_all_messages_to_all_listeners_in_order() {
    let g = Gopher::deterministic();
    let lines = demos::broadcast(&g, 10, 100).expect("broadcast demo runs");
    assert_eq!(lines.len(), 1001, "1,000 deliveries plus one summary line");
    for listener in 0..10 {
        for (j, line) in lines[listener * 100..(listener + 1) * 100].iter().enumerate() {
            assert_eq!(*line, format!("{listener}: msg-{}", j + 1), "transcripts stay in publication order");
        }
    }
    assert_eq!(lines[1000], "RESULT: listeners=10 messages=100 deliveries=1000");
    pass(7, "broadcast 10x100: 1,000 deliveries, every transcript order-identical");
}

/// A worker that tags every data value with its replica index.
fn tagging_worker(index: usize) -> Result<Transputer, gopher::DefinitionError> {
    Transputer::define(&format!("worker-{index}"))
        .in_port::<u64>("data")
        .out_port::<(usize, u64)>("out")
        .stateless()
        .on_read("data", move |p: Ports, v: u64, _s: ()| async move {
            p.writer::<(usize, u64)>("out")?.awrite((index, v)).await?;
            proceed(())
        })
        .build()
}

#[test]
fn criterion_08_replication_policies_route_as_specified() {
    // Distribute: key(m) = m, n = 4 — every send of the same value lands on
    // the same instance, across 1,000 repeats.
    let g = Gopher::deterministic();
    let group = Transputer::replicate(
        4,
        PortPolicies::new().distribute::<u64>("data", |v| *v as usize).share("out"),
        tagging_worker,
    )
    .expect("replication config is valid");
    let data = g.growing::<u64>();
    let out = g.growing::<(usize, u64)>();
    group.bind_in("data", data.input()).unwrap();
    group.bind_out("out", out.output()).unwrap();
    let mut running = group.start(&g).unwrap();
    for _ in 0..1000 {
        g.block_on(data.awrite(10)).unwrap();
    }
    data.close();
    for h in running.handles_mut() {
        assert!(matches!(g.block_on(h.completion()), Err(Failure::EndOfInput)));
    }
    let routed = drain(&g, &out);
    assert_eq!(routed.len(), 1000);
    assert!(
        routed.iter().all(|&(tag, v)| tag == 2 && v == 10),
        "key=value mod 4 must route every 10 to instance 2"
    );

    // Duplicate: 100 control messages reach all 10 instances exactly once,
    // in order.
    let g = Gopher::deterministic();
    let group = Transputer::replicate(
        10,
        PortPolicies::new().duplicate("data").share("out"),
        tagging_worker,
    )
    .expect("replication config is valid");
    let control = g.growing::<u64>();
    let out = g.growing::<(usize, u64)>();
    group.bind_in("data", control.input()).unwrap();
    group.bind_out("out", out.output()).unwrap();
    let mut running = group.start(&g).unwrap();
    for v in 1..=100u64 {
        g.block_on(control.awrite(v)).unwrap();
    }
    control.close();
    for h in running.handles_mut() {
        assert!(matches!(g.block_on(h.completion()), Err(Failure::EndOfInput)));
    }
    let copies = drain(&g, &out);
    assert_eq!(copies.len(), 1000, "every instance sees every message exactly once");
    let mut per_instance: Vec<Vec<u64>> = vec![Vec::new(); 10];
    for (tag, v) in copies {
        per_instance[tag].push(v);
    }
    let want: Vec<u64> = (1..=100).collect();
    for (tag, seen) in per_instance.iter().enumerate() {
        assert_eq!(seen, &want, "instance {tag} must see the full ordered stream");
    }

    // Share: 3 instances compete for one channel; the multiset of 300 values
    // is conserved.
    let g = Gopher::deterministic();
    let group = Transputer::replicate(
        3,
        PortPolicies::new().share("data").share("out"),
        tagging_worker,
    )
    .expect("replication config is valid");
    let data = g.growing::<u64>();
    let out = g.growing::<(usize, u64)>();
    group.bind_in("data", data.input()).unwrap();
    group.bind_out("out", out.output()).unwrap();
    let mut running = group.start(&g).unwrap();
    for v in 0..300u64 {
        g.block_on(data.awrite(v)).unwrap();
    }
    data.close();
    for h in running.handles_mut() {
        assert!(matches!(g.block_on(h.completion()), Err(Failure::EndOfInput)));
    }
    let mut values: Vec<u64> = drain(&g, &out).into_iter().map(|(_, v)| v).collect();
    values.sort_unstable();
    let want: Vec<u64> = (0..300).collect();
    assert_eq!(values, want, "work sharing must conserve the input multiset");

    pass(8, "replication: Distribute stable over 1,000 sends, Duplicate total to all 10, Share conserves");
}

#[test]
fn criterion_09_supervised_restart_processes_every_healthy_message() {
    let g = Gopher::deterministic();
    let worker = Transputer::define("faulty")
        .in_port::<u64>("in")
        .out_port::<u64>("out")
        .stateless()
        .on_read("in", |p: Ports, v: u64, _s: ()| async move {
            if v % 10 == 0 {
                panic!("injected fault on {v}");
            }
            p.writer::<u64>("out")?.awrite(v).await?;
            proceed(())
        })
        .recovery(|_f| gopher::RecoveryDecision::Restart)
        .restart_limit(100)
        .build()
        .expect("worker definition is valid");

    let input = g.growing::<u64>();
    let output = g.growing::<u64>();
    worker.bind_in("in", input.input()).unwrap();
    worker.bind_out("out", output.output()).unwrap();
    let mut running = worker.start(&g).unwrap();

    for v in 1..=100u64 {
        g.block_on(input.awrite(v)).unwrap();
    }
    input.close();
    assert!(matches!(g.block_on(running.completion()), Err(Failure::EndOfInput)));

    let delivered = drain(&g, &output);
    let want: Vec<u64> = (1..=100).filter(|v| v % 10 != 0).collect();
    assert_eq!(delivered, want, "every non-faulting message processed exactly once, in order");
    assert_eq!(running.restart_count(), 10, "one restart per injected fault");
    pass(9, "supervision: 10 injected faults -> 10 restarts, all 90 healthy messages exactly once");
}

#[test]
fn criterion_10_ten_thousand_process_ring_on_one_worker() {
    const RING: usize = 10_000;
    let g = Gopher::threaded(1).unwrap();
    let started = Instant::now();

    let stations: Vec<Channel<u64>> = (0..=RING).map(|_| g.rendezvous::<u64>()).collect();
    for i in 0..RING {
        let take = stations[i].input();
        let put = stations[i + 1].output();
        g.spawn(async move {
            let token = take.read().await?;
            put.write(token + 1).await?;
            Ok(())
        });
    }
    g.block_on(stations[0].awrite(0)).unwrap();
    let token = g.block_on(stations[RING].aread()).unwrap();
    let elapsed = started.elapsed();

    assert_eq!(token as usize, RING, "the token must pass through every process exactly once");
    assert!(elapsed < Duration::from_secs(30), "ring took {elapsed:?}, budget is 30s");
    pass(10, "10,000-process ping-pong ring on one worker finished within budget");
}

#[test]
fn criterion_11_functor_and_filter_property_suites() {
    use proptest::collection::vec;
    use proptest::prelude::*;
    use proptest::test_runner::{Config, TestRunner};

    const CASES: u32 = 128;
    let config = Config { cases: CASES, failure_persistence: None, ..Config::default() };

    fn drain_view(g: &Gopher, view: &In<i64>) -> Vec<i64> {
        let mut out = Vec::new();
        loop {
            match g.block_on(view.aread()) {
                Ok(v) => out.push(v),
                Err(Failure::EndOfInput) => return out,
                Err(f) => panic!("unexpected failure while draining: {f}"),
            }
        }
    }
    fn filled(g: &Gopher, xs: &[i64]) -> Channel<i64> {
        let ch = g.growing::<i64>();
        for &x in xs {
            g.block_on(ch.awrite(x)).unwrap();
        }
        ch.close();
        ch
    }

    let mut runner = TestRunner::new(config.clone());
    runner
        .run(&(vec(any::<i64>(), 0..48), any::<i64>(), any::<i64>()), |(xs, a, b)| {
            let f = move |x: i64| x.wrapping_mul(a);
            let h = move |x: i64| x.wrapping_add(b);
            let g = Gopher::deterministic();
            let identity = drain_view(&g, &filled(&g, &xs).input().map(|x| x));
            prop_assert_eq!(&identity, &xs);
            let staged = drain_view(&g, &filled(&g, &xs).input().map(f).map(h));
            let oracle: Vec<i64> = xs.iter().map(|&x| h(f(x))).collect();
            prop_assert_eq!(staged, oracle);
            Ok(())
        })
        .expect("functor laws hold");

    let mut runner = TestRunner::new(config);
    runner
        .run(&(vec(any::<i64>(), 0..48), 1i64..7, 0i64..7), |(xs, m, k)| {
            let p = move |x: &i64| x.rem_euclid(m) < k;
            let g = Gopher::deterministic();
            let got = drain_view(&g, &filled(&g, &xs).input().filter(p));
            let oracle: Vec<i64> = xs.iter().copied().filter(p).collect();
            prop_assert_eq!(got, oracle);
            Ok(())
        })
        .expect("filter soundness holds");

    pass(11, "functor and filter law suites hold over 128 randomized cases each");
}
