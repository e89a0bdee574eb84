"""Command-line surface tying the modules into runnable pipelines.

Every command supports --config pointing at a versioned JSON key-value
file whose entries fill in unset flags (explicit flags win). Exit codes:
0 success, 1 runtime failure, 2 usage error. --threads only changes
wall time, never output bytes.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import basecaller as bc
from . import formats, perf, pipeline, signal_sim
from .dna import random_genome
from .seed_index import MapParams, build_index, inverse_bwt

CONFIG_VERSION = 1


class CliError(RuntimeError):
    pass


def _load_config(path) -> dict:
    if path is None:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict) or doc.get("version") != CONFIG_VERSION:
        raise CliError(f"{path}: config must be a JSON object with version={CONFIG_VERSION}")
    return doc


def _resolve(args, config: dict, name: str, default):
    value = getattr(args, name, None)
    if value is not None:
        return value
    if name in config:
        return config[name]
    return default


def _require(args, config: dict, name: str):
    value = _resolve(args, config, name, None)
    if value is None:
        raise CliError(f"missing required option --{name.replace('_', '-')}")
    return value


def _read_genome(path) -> str:
    records = formats.read_fastx(path)
    return "".join(r.sequence for r in records)


def _load_signals(path) -> list:
    """One NSIG file, or a directory of them (sorted by name)."""
    p = Path(path)
    if p.is_dir():
        files = sorted(p.glob("*.nsig"))
        if not files:
            raise CliError(f"{path}: no .nsig files found")
        return [formats.read_nsig(f) for f in files]
    return [formats.read_nsig(p)]


# --- commands ---------------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg = _load_config(args.config)
    n_reads = int(_resolve(args, cfg, "n_reads", 1))
    seed = int(_resolve(args, cfg, "seed", 0))
    noise = float(_resolve(args, cfg, "noise", 1.0))
    read_len = int(_resolve(args, cfg, "read_len", 500))
    read_len_sd = float(_resolve(args, cfg, "read_len_sd", 0.0))
    sample_rate = int(_resolve(args, cfg, "sample_rate", signal_sim.DEFAULT_SAMPLE_RATE))
    out = Path(_require(args, cfg, "out"))
    genome_path = _resolve(args, cfg, "genome", None)
    random_len = _resolve(args, cfg, "random_len", None)
    if (genome_path is None) == (random_len is None):
        raise CliError("give exactly one of --genome or --random-len")
    genome = _read_genome(genome_path) if genome_path else int(random_len)
    entries = signal_sim.gen_dataset(
        genome,
        n_reads,
        (read_len, read_len_sd),
        out,
        seed=seed,
        noise_scale=noise,
        sample_rate=sample_rate,
    )
    print(f"wrote {len(entries)} reads under {out}")
    return 0


def _dataset_to_samples(data_dir) -> list[bc.TrainSample]:
    data_dir = Path(data_dir)
    truth = formats.read_truth_tsv(data_dir / "truth.tsv")
    samples = []
    for entry in truth:
        sig = formats.read_nsig(data_dir / "reads" / f"{entry.read_id}.nsig")
        norm = pipeline.normalize_signal(sig)
        samples.append(
            bc.TrainSample(norm.samples, entry.truth.sequence, entry.truth.dwell_starts)
        )
    return samples


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    data_dir = _require(args, cfg, "data")
    out = _require(args, cfg, "out")
    seed = int(_resolve(args, cfg, "seed", 0))
    spec_path = _resolve(args, cfg, "spec", None)
    spec = _load_spec(spec_path)
    hyper = bc.TrainConfig(
        epochs=int(_resolve(args, cfg, "epochs", bc.TrainConfig.epochs)),
        batch_size=int(_resolve(args, cfg, "batch_size", bc.TrainConfig.batch_size)),
        lr=float(_resolve(args, cfg, "lr", bc.TrainConfig.lr)),
    )
    samples = _dataset_to_samples(data_dir)
    log_path = _resolve(args, cfg, "log", None)
    lines: list[str] = []
    weights = bc.train(samples, spec, hyper, seed=seed, log=lines.append)
    formats.write_weights(out, spec, weights)
    if log_path:
        Path(log_path).write_text("\n".join(lines) + "\n", encoding="ascii")
    else:
        for line in lines:
            if line.startswith("epoch=") and "done" in line:
                print(line)
    print(f"wrote weights to {out}")
    return 0


def _load_spec(spec_path) -> bc.CnnSpec:
    if spec_path is None:
        return bc.default_spec()
    with open(spec_path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    return bc.CnnSpec(tuple(bc.ConvLayerSpec(**layer) for layer in doc["layers"]))


def cmd_basecall(args) -> int:
    cfg = _load_config(args.config)
    weights_path = _require(args, cfg, "weights")
    signals_path = _require(args, cfg, "signals")
    out = _require(args, cfg, "out")
    threads = int(_resolve(args, cfg, "threads", 1))
    chunk_len = int(_resolve(args, cfg, "chunk_len", 0))
    quantize = bool(_resolve(args, cfg, "quantize_int8", False))
    trace_path = _resolve(args, cfg, "trace", None)

    spec, weights = formats.read_weights(weights_path)
    if quantize:
        weights = bc.QuantizedWeights.quantize(weights)
    signals = _load_signals(signals_path)
    trace = perf.WorkloadTrace() if trace_path else None
    per_traces = [perf.WorkloadTrace() if trace else None for _ in signals]

    def call(item):
        sig, tr = item
        seq, quals = pipeline.basecall_signal(
            spec, weights, sig, chunk_len=chunk_len, trace=tr
        )
        return formats.FastxRecord(sig.source_id, seq, bc.phred_string(quals))

    records = pipeline._run_ordered(call, list(zip(signals, per_traces)), threads)
    if trace is not None:
        for t in per_traces:
            trace.merge(t)
        with open(trace_path, "w", encoding="ascii") as fh:
            json.dump(trace.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")
    formats.write_fastq(out, records)
    print(f"basecalled {len(records)} signals -> {out}")
    return 0


def cmd_index(args) -> int:
    cfg = _load_config(args.config)
    ref_path = _require(args, cfg, "reference")
    out = _require(args, cfg, "out")
    occ_stride = int(_resolve(args, cfg, "occ_stride", 64))
    sa_stride = int(_resolve(args, cfg, "sa_stride", 32))
    genome = _read_genome(ref_path)
    index = build_index(genome, occ_stride=occ_stride, sa_stride=sa_stride)
    formats.write_index(out, index)
    print(f"indexed {index.text_len} bases -> {out}")
    return 0


def cmd_detect(args) -> int:
    cfg = _load_config(args.config)
    index_path = _require(args, cfg, "index")
    out = _resolve(args, cfg, "out", None)
    threads = int(_resolve(args, cfg, "threads", 1))
    mode = _resolve(args, cfg, "mode", "seed")
    theta_frac = float(_resolve(args, cfg, "theta_frac", 0.1))
    theta_id = float(_resolve(args, cfg, "theta_id", 0.8))
    min_identity = float(_resolve(args, cfg, "min_identity", 0.5))
    reads_path = _resolve(args, cfg, "reads", None)
    signals_path = _resolve(args, cfg, "signals", None)
    trace_path = _resolve(args, cfg, "trace", None)
    if (reads_path is None) == (signals_path is None):
        raise CliError("give exactly one of --reads or --signals")

    index = formats.read_index(index_path)
    params = pipeline.DetectParams(
        theta_frac=theta_frac,
        theta_id=theta_id,
        mode=mode,
        map_params=MapParams(min_identity=min_identity),
    )
    spec = weights = None
    if signals_path is not None:
        weights_path = _require(args, cfg, "weights")
        spec, weights = formats.read_weights(weights_path)
        if bool(_resolve(args, cfg, "quantize_int8", False)):
            weights = bc.QuantizedWeights.quantize(weights)
        inputs = _load_signals(signals_path)
    else:
        inputs = formats.read_fastx(reads_path)
    trace = perf.WorkloadTrace() if trace_path else None
    report = pipeline.detect_pathogen(
        inputs,
        index,
        spec=spec,
        weights=weights,
        params=params,
        trace=trace,
        threads=threads,
        pathogen_id=Path(index_path).stem,
    )
    if trace is not None:
        with open(trace_path, "w", encoding="ascii") as fh:
            json.dump(trace.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")
    doc = json.dumps(report.to_dict(), indent=1, sort_keys=True)
    if out:
        Path(out).write_text(doc + "\n", encoding="ascii")
    print(report.summary())
    return 0


def cmd_demux(args) -> int:
    cfg = _load_config(args.config)
    reads_path = _require(args, cfg, "reads")
    barcodes_path = _require(args, cfg, "barcodes")
    out = _require(args, cfg, "out")
    max_hamming = int(_resolve(args, cfg, "max_hamming", 2))
    reads = formats.read_fastx(reads_path)
    barcodes = [
        pipeline.Barcode(r.id, r.sequence) for r in formats.read_fastx(barcodes_path)
    ]
    assignment = pipeline.demultiplex(reads, barcodes, max_hamming)
    with open(out, "w", encoding="ascii", newline="\n") as fh:
        fh.write("read_id\tbarcode\n")
        for read in reads:
            fh.write(f"{read.id}\t{assignment[read.id] or 'unassigned'}\n")
    n = sum(1 for v in assignment.values() if v)
    print(f"assigned {n}/{len(reads)} reads -> {out}")
    return 0


def cmd_trim(args) -> int:
    cfg = _load_config(args.config)
    reads_path = _require(args, cfg, "reads")
    primers_path = _require(args, cfg, "primers")
    out = _require(args, cfg, "out")
    search_window = int(_resolve(args, cfg, "search_window", 100))
    max_ed = int(_resolve(args, cfg, "max_ed", 2))
    reads = formats.read_fastx(reads_path)
    primers = [pipeline.Primer(r.id, r.sequence) for r in formats.read_fastx(primers_path)]
    out_records = []
    n_trimmed = 0
    for read in reads:
        seq, report = pipeline.trim_primer(read.sequence, primers, search_window, max_ed)
        if report.leading or report.trailing:
            n_trimmed += 1
        qual = None
        if read.quality is not None:
            lead = report.leading.cut if report.leading else 0
            qual = read.quality[lead : lead + len(seq)]
        out_records.append(formats.FastxRecord(read.id, seq, qual))
    writer = formats.write_fastq if reads[0].quality is not None else formats.write_fasta
    writer(out, out_records)
    print(f"trimmed {n_trimmed}/{len(reads)} reads -> {out}")
    return 0


def cmd_filter(args) -> int:
    cfg = _load_config(args.config)
    reads_path = _require(args, cfg, "reads")
    out = _require(args, cfg, "out")
    min_len = int(_resolve(args, cfg, "min_len", 0))
    log_path = _resolve(args, cfg, "log", None)
    reads = formats.read_fastx(reads_path)
    kept, log = pipeline.filter_reads(reads, min_len=min_len)
    writer = formats.write_fastq if reads[0].quality is not None else formats.write_fasta
    writer(out, kept)
    if log_path:
        with open(log_path, "w", encoding="ascii", newline="\n") as fh:
            fh.write("read_id\treason\n")
            for read_id, reason in log:
                fh.write(f"{read_id}\t{reason}\n")
    print(f"kept {len(kept)}/{len(reads)} reads -> {out}")
    return 0


def cmd_perf_report(args) -> int:
    cfg = _load_config(args.config)
    trace_path = _require(args, cfg, "trace")
    out = _resolve(args, cfg, "out", None)
    soc_path = _resolve(args, cfg, "soc_config", None)
    soc = perf.load_soc_config(soc_path) if soc_path else perf.default_soc_config()
    with open(trace_path, "r", encoding="utf-8") as fh:
        trace = perf.WorkloadTrace.from_dict(json.load(fh))
    report = perf.perf_report(trace, soc)
    if out:
        Path(out).write_text(
            json.dumps(report.to_dict(), indent=1, sort_keys=True) + "\n", encoding="ascii"
        )
    print(perf.render_table(report))
    return 0


# --- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nanosoc",
        description="Mobile-genomics SoC compute pipeline tools",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=fn)
        p.add_argument("--config", help="JSON key-value config (version 1)")
        p.add_argument("--threads", type=int, help="worker threads (default 1)")
        return p

    p = add("simulate", cmd_simulate, "generate a synthetic signal dataset")
    p.add_argument("--genome", help="reference FASTA to sample reads from")
    p.add_argument("--random-len", dest="random_len", type=int,
                   help="generate a random genome of this length instead")
    p.add_argument("--n-reads", dest="n_reads", type=int)
    p.add_argument("--read-len", dest="read_len", type=int)
    p.add_argument("--read-len-sd", dest="read_len_sd", type=float)
    p.add_argument("--noise", type=float, help="noise scale (default 1.0)")
    p.add_argument("--sample-rate", dest="sample_rate", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")

    p = add("train", cmd_train, "train basecaller weights on a simulated dataset")
    p.add_argument("--data", help="simulate output directory")
    p.add_argument("--out", help="weights file (CNNW)")
    p.add_argument("--spec", help="architecture JSON (default: shipped)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--log", help="write the training log here")

    p = add("basecall", cmd_basecall, "call bases from NSIG signals")
    p.add_argument("--weights", help="CNNW weights file")
    p.add_argument("--signals", help="NSIG file or directory")
    p.add_argument("--out", help="output FASTQ")
    p.add_argument("--chunk-len", dest="chunk_len", type=int)
    p.add_argument("--quantize-int8", dest="quantize_int8", action="store_const", const=True)
    p.add_argument("--trace", help="write a workload trace JSON here")

    p = add("index", cmd_index, "build an FM-index from a reference FASTA")
    p.add_argument("--reference", help="reference FASTA")
    p.add_argument("--out", help="output FMIX file")
    p.add_argument("--occ-stride", dest="occ_stride", type=int)
    p.add_argument("--sa-stride", dest="sa_stride", type=int)

    p = add("detect", cmd_detect, "run pathogen detection over reads or signals")
    p.add_argument("--index", help="FMIX index")
    p.add_argument("--reads", help="FASTA/FASTQ reads")
    p.add_argument("--signals", help="NSIG file or directory")
    p.add_argument("--weights", help="CNNW weights (for --signals)")
    p.add_argument("--quantize-int8", dest="quantize_int8", action="store_const", const=True)
    p.add_argument("--mode", choices=["seed", "ed"])
    p.add_argument("--theta-frac", dest="theta_frac", type=float)
    p.add_argument("--theta-id", dest="theta_id", type=float)
    p.add_argument("--min-identity", dest="min_identity", type=float)
    p.add_argument("--trace", help="write a workload trace JSON here")
    p.add_argument("--out", help="write the detection report JSON here")

    p = add("demux", cmd_demux, "assign reads to barcodes")
    p.add_argument("--reads")
    p.add_argument("--barcodes", help="FASTA of barcodes")
    p.add_argument("--max-hamming", dest="max_hamming", type=int)
    p.add_argument("--out", help="output TSV")

    p = add("trim", cmd_trim, "trim primers from read ends")
    p.add_argument("--reads")
    p.add_argument("--primers", help="FASTA of primers")
    p.add_argument("--search-window", dest="search_window", type=int)
    p.add_argument("--max-ed", dest="max_ed", type=int)
    p.add_argument("--out")

    p = add("filter", cmd_filter, "filter reads by length")
    p.add_argument("--reads")
    p.add_argument("--min-len", dest="min_len", type=int)
    p.add_argument("--out")
    p.add_argument("--log", help="write rejection log TSV here")

    p = add("perf-report", cmd_perf_report, "cycle/energy report from a workload trace")
    p.add_argument("--trace", help="workload trace JSON")
    p.add_argument("--soc-config", dest="soc_config", help="SoC config JSON (default: shipped)")
    p.add_argument("--out", help="write the report JSON here")

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, formats.FormatError, pipeline.ConfigurationError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (OSError, ValueError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
