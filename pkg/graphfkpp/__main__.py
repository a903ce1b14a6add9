# Licensed under the Apache License 2.0, see LICENSE file.

import sys
from typing import List, Optional

from jsonargparse import CLI, set_config_read_mode, set_docstring_parse_options

from graphfkpp.experiment import converge as converge_fn
from graphfkpp.experiment import measure_front_speed as front_speed_fn
from graphfkpp.scripts.dual_check import dual_check as dual_check_fn
from graphfkpp.scripts.kernel import compute_kernel as kernel_fn
from graphfkpp.scripts.simulate import simulate_bvm as simulate_bvm_fn
from graphfkpp.scripts.simulate import simulate_sde as simulate_sde_fn
from graphfkpp.scripts.validate import validate as validate_fn


DESCRIPTION = (
    "Stochastic FKPP on metric graphs. Flags are spelled with underscores (--out_dir, --t_end) and list"
    " values are YAML, for example --ladder '[8, 16, 32]'."
)


def main(argv: Optional[List[str]] = None) -> None:
    parser_data = {
        "simulate-bvm": simulate_bvm_fn,
        "simulate-sde": simulate_sde_fn,
        "kernel": kernel_fn,
        "dual-check": dual_check_fn,
        "converge": converge_fn,
        "front-speed": front_speed_fn,
        "validate": validate_fn,
    }

    set_docstring_parse_options(attribute_docstrings=True)
    set_config_read_mode(urls_enabled=True)

    try:
        CLI(parser_data, args=argv, description=DESCRIPTION)
    except Exception as ex:
        # argument errors and validation failures exit through SystemExit with their own status
        print(f"error: {type(ex).__name__}: {ex}", file=sys.stderr)
        raise SystemExit(2)


if __name__ == "__main__":
    main()
