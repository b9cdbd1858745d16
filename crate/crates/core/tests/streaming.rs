//! Session behaviour of the streaming decoder: resumption, allocation-free
//! steps, sink errors, concurrent sessions and first-frame latency.

use std::alloc::{GlobalAlloc, Layout, System};
use std::cell::Cell;

use multirate_core::benchmark::first_frame_latency;
use multirate_core::decoder::{continue_stream, FrameBuffer, SinkError};
use multirate_core::{
    decode_stream, synth_utterance, unroll_frames, weights_init, DecoderState, DecoderWeights,
    Encodings, Error, FrameFeatureTrack, Model, ModelConfig, ModelKind, ModelWeights,
    MultiRateEncoder, SpectrumFrame, StreamingDecoder,
};

struct CountingAlloc;

thread_local! {
    static ALLOCS: Cell<usize> = const { Cell::new(0) };
}

unsafe impl GlobalAlloc for CountingAlloc {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let _ = ALLOCS.try_with(|c| c.set(c.get() + 1));
        unsafe { System.alloc(layout) }
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        unsafe { System.dealloc(ptr, layout) }
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        let _ = ALLOCS.try_with(|c| c.set(c.get() + 1));
        unsafe { System.realloc(ptr, layout, new_size) }
    }
}

#[global_allocator]
static GLOBAL: CountingAlloc = CountingAlloc;

fn allocations() -> usize {
    ALLOCS.with(Cell::get)
}

struct Fixture {
    weights: ModelWeights,
    track: FrameFeatureTrack,
    enc: Encodings,
}

fn fixture(seed: u64, seconds: f64) -> Fixture {
    let config = ModelConfig::default();
    let weights = weights_init(seed, &config).unwrap();
    let tree = synth_utterance(seed + 100, seconds).unwrap();
    let enc = MultiRateEncoder::from_model(&weights)
        .unwrap()
        .encode(&tree, &config, None)
        .unwrap();
    Fixture { weights, track: unroll_frames(&tree), enc }
}

fn bits(frames: &[SpectrumFrame]) -> Vec<u32> {
    frames.iter().flat_map(|f| f.0.map(f32::to_bits)).collect()
}

#[test]
fn resumed_session_matches_uninterrupted_run() {
    let f = fixture(1, 4.0);
    let dw = DecoderWeights::from_model(&f.weights).unwrap();
    let mut full = FrameBuffer::default();
    decode_stream(&f.track, &f.enc, &dw, &mut full, None).unwrap();

    for cut in [0, 1, f.track.len() / 3, f.track.len() - 1] {
        let mut s = StreamingDecoder::new(&dw, &f.enc).unwrap();
        let mut head = Vec::new();
        for t in 0..cut {
            head.push(s.step(f.track.frame(t), None).unwrap());
        }
        let bytes = s.into_state().to_bytes();
        let state = DecoderState::from_bytes(&bytes).unwrap();
        assert_eq!(state.t, cut);
        let mut tail = FrameBuffer::default();
        let resumed = StreamingDecoder::resume(&dw, &f.enc, state).unwrap();
        let n = continue_stream(resumed, &f.track, &mut tail, None).unwrap();
        assert_eq!(n, f.track.len() - cut);
        head.extend(tail.0);
        assert_eq!(bits(&head), bits(&full.0), "cut at {cut}");
    }
}

#[test]
fn corrupted_state_is_rejected() {
    let f = fixture(2, 0.5);
    let dw = DecoderWeights::from_model(&f.weights).unwrap();
    let s = StreamingDecoder::new(&dw, &f.enc).unwrap();
    let bytes = s.state().to_bytes();
    assert!(DecoderState::from_bytes(&bytes[..bytes.len() - 1]).is_err());

    let small = ModelConfig { hidden1: 8, hidden2: 4, ..ModelConfig::default() };
    let other = DecoderState::initial(small.hidden1, small.hidden2);
    assert!(StreamingDecoder::resume(&dw, &f.enc, other).is_err());
}

#[test]
fn steps_do_not_allocate() {
    let f = fixture(3, 2.0);
    let dw = DecoderWeights::from_model(&f.weights).unwrap();
    let mut s = StreamingDecoder::new(&dw, &f.enc).unwrap();
    s.step(f.track.frame(0), None).unwrap();
    let before = allocations();
    let mut sum = 0.0f32;
    for t in 1..f.track.len() {
        sum += s.step(f.track.frame(t), None).unwrap().0[0];
    }
    let after = allocations();
    assert!(sum.is_finite());
    assert_eq!(after - before, 0, "{} allocations over {} steps", after - before, f.track.len() - 1);
}

#[test]
fn sink_error_stops_decoding_and_reports_progress() {
    let f = fixture(4, 1.0);
    let dw = DecoderWeights::from_model(&f.weights).unwrap();
    let mut seen = 0;
    let mut sink = |t: usize, _: &SpectrumFrame| -> Result<(), SinkError> {
        seen += 1;
        if t == 10 {
            Err("disk full".into())
        } else {
            Ok(())
        }
    };
    match decode_stream(&f.track, &f.enc, &dw, &mut sink, None) {
        Err(Error::SinkAborted { emitted, source }) => {
            assert_eq!(emitted, 10);
            assert_eq!(source.to_string(), "disk full");
        }
        other => panic!("expected a sink error, got {other:?}"),
    }
    assert_eq!(seen, 11);
}

#[test]
fn concurrent_sessions_share_weights() {
    let f = fixture(5, 1.5);
    let dw = DecoderWeights::from_model(&f.weights).unwrap();
    let mut expected = FrameBuffer::default();
    decode_stream(&f.track, &f.enc, &dw, &mut expected, None).unwrap();
    let expected = bits(&expected.0);

    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..4)
            .map(|_| {
                scope.spawn(|| {
                    let mut out = FrameBuffer::default();
                    decode_stream(&f.track, &f.enc, &dw, &mut out, None).unwrap();
                    bits(&out.0)
                })
            })
            .collect();
        for h in handles {
            assert_eq!(h.join().unwrap(), expected);
        }
    });
}

#[test]
fn first_frame_latency_grows_slowly_with_length() {
    let w = weights_init(6, &ModelConfig::default()).unwrap();
    let model = Model::build(ModelKind::MultiRate, &w).unwrap();
    let short = synth_utterance(7, 10.0).unwrap();
    let long = synth_utterance(8, 60.0).unwrap();
    let best = |tree| {
        (0..15)
            .map(|_| first_frame_latency(&model, tree).unwrap())
            .fold(f64::INFINITY, f64::min)
    };
    let (a, b) = (best(&short), best(&long));
    assert!(b <= 4.0 * a, "10 s: {a:.3} ms, 60 s: {b:.3} ms");
}
