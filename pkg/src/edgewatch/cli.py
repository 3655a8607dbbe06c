"""Command-line entry points: `edge`, `cloud`, and `sim`."""

from __future__ import annotations

import argparse
import logging
import os
import sys

from . import canon


def _setup_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s")


# -- edge -----------------------------------------------------------------------

def _build_agent(config_path: str):
    from .edge.agent import EdgeAgent
    from .edge.config import EdgeConfig
    from .edge.links import TcpLink

    config = EdgeConfig.from_file(config_path)
    host, port = config.cloud_host_port()
    link = TcpLink(host, port)
    return EdgeAgent(config, link), config


def edge_main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="edge", description="speed-layer edge agent")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the scoring pipeline over a sample stream")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--input", default="-",
                       help="sample value file, one real per line (default stdin)")

    p_up = sub.add_parser("upload-batch", help="upload closed spool segments to the cloud")
    p_up.add_argument("--config", required=True)

    p_st = sub.add_parser("status", help="print the agent status file")
    p_st.add_argument("--config", required=True)

    args = parser.parse_args(argv)
    _setup_logging(args.verbose)

    if args.command == "status":
        from .edge.config import EdgeConfig
        config = EdgeConfig.from_file(args.config)
        path = os.path.join(config.state_dir, "status")
        if not os.path.exists(path):
            print("no status file yet", file=sys.stderr)
            return 1
        with open(path, "rb") as fh:
            status = canon.loads(fh.read())
        for key in sorted(status):
            print(f"{key}: {status[key]}")
        return 0

    agent, config = _build_agent(args.config)
    try:
        if args.command == "upload-batch":
            result = agent.trigger_upload()
            print(f"segments sent: {result.segments_sent}  records: {result.records_sent}  "
                  f"pending: {result.segments_pending}")
            return 0 if result.ok else 1

        fh = sys.stdin if args.input == "-" else open(args.input)
        try:
            values = (float(line) for line in fh if line.strip())
            outcomes = agent.process_values(values)
        finally:
            if fh is not sys.stdin:
                fh.close()
        anomalies = sum(1 for o in outcomes if o.is_anomaly)
        print(f"windows: {len(outcomes)}  anomalies: {anomalies}  "
              f"rules: {agent.rules_published}  model: v{agent.model.version}")
        return 0
    finally:
        agent.close()


# -- cloud ------------------------------------------------------------------------

def cloud_main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="cloud", description="maintenance cloud service")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    p_serve = sub.add_parser("serve", help="run the TCP ingest listener and HTTP API")
    p_serve.add_argument("--config", required=True)
    args = parser.parse_args(argv)
    _setup_logging(args.verbose)

    from .cloud.config import CloudConfig
    from .cloud.http import ApiServer
    from .cloud.service import CloudService
    from .cloud.tcp import IngestServer

    config = CloudConfig.from_file(args.config)
    service = CloudService(config)
    ingest = IngestServer(service, host=config.host, port=config.tcp_port)
    api = ApiServer(service, host=config.host, port=config.http_port)
    ingest.start_background()
    api.start_background()
    print(f"ingest on {config.host}:{ingest.port}  http on {config.host}:{api.port}")
    try:
        import threading
        threading.Event().wait()
    except KeyboardInterrupt:
        pass
    finally:
        ingest.shutdown()
        api.shutdown()
        service.close()
    return 0


# -- sim --------------------------------------------------------------------------

def sim_main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="sim", description="synthetic-fault simulation harness")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one scenario file")
    p_run.add_argument("--scenario", required=True)
    p_run.add_argument("--topology", choices=("inproc", "tcp"), default="inproc")
    p_run.add_argument("--out", default="sim-out")

    p_demo = sub.add_parser("demo", help="run the fan demo and zero-fault scenarios")
    p_demo.add_argument("--topology", choices=("inproc", "tcp"), default="inproc")
    p_demo.add_argument("--out", default="sim-out")

    args = parser.parse_args(argv)
    _setup_logging(args.verbose)

    from .sim.harness import run_scenario
    from .sim.report import report
    from .sim.scenario import ScenarioConfig, demo_scenario, zero_fault_scenario

    if args.command == "run":
        scenarios = [ScenarioConfig.from_file(args.scenario)]
    else:
        scenarios = [demo_scenario(), zero_fault_scenario()]

    results = []
    for scenario in scenarios:
        print(f"running scenario {scenario.name} ({args.topology})...")
        results.append(run_scenario(
            scenario, topology=args.topology,
            out_dir=os.path.join(args.out, f"state-{scenario.name}")))
    code = report(results, args.out)
    for r in results:
        r.close()
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(sim_main())
