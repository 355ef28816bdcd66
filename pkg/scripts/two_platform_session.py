"""Local two-platform verification over TCP: a verifier and two simulated platforms.

Both platforms prepare the same state spec with independent shot noise; the
script prints the report each platform receives.
"""

import argparse
import threading

from xpv.xverify import SessionConfig, client_run, serve
from xpv.xverify.client import SimulatorSource


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--state", default="pr:4:seed=5")
    p.add_argument("--state2", help="state of the second platform (default: same)")
    p.add_argument("--nu", type=int, default=200)
    p.add_argument("--nm", type=int, default=200)
    p.add_argument("--seed", type=int, default=42)
    args = p.parse_args()
    n_sites = int(args.state.split(":")[1])
    cfg = SessionConfig(n_u=args.nu, n_sites=n_sites, master_seed=args.seed, timeout=120)
    addr, ready = {}, threading.Event()

    def on_ready(a, sid):
        addr["a"] = a
        ready.set()

    server = threading.Thread(target=serve, args=("127.0.0.1:0", cfg, on_ready), daemon=True)
    server.start()
    ready.wait(10)
    sources = {
        "alice": SimulatorSource(args.state, args.nm, 1, 0),
        "bob": SimulatorSource(args.state2 or args.state, args.nm, 1, 1),
    }
    reports = {}
    workers = [
        threading.Thread(target=lambda k=k: reports.update({k: client_run(addr["a"], k, sources[k])})) for k in sources
    ]
    for w in workers:
        w.start()
    for w in workers:
        w.join()
    server.join()
    print(reports["alice"].table())
    print("reports identical on both platforms:", reports["alice"].to_json() == reports["bob"].to_json())


if __name__ == "__main__":
    main()
