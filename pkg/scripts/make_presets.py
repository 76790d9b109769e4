"""Regenerate the bundled scenario presets from the reference builders."""

import json
from pathlib import Path

from blab.cycle_model import ref1, ref2, ref_df, ref_sf

OUT = Path(__file__).resolve().parents[1] / "src" / "blab" / "presets"

PRESETS = {
    "ref1-type1": ("Type-I saddle cycle with alpha = 0.5: cs covering and blender certificate",
                   ref1(), ["classify", "covering", "verify-blender", "sweep-mu"], {"literal_checks": 1}),
    "ref1-typeII": ("Type-II variant (a = -1): secondary-cycle mu values and theta' estimate",
                    ref1(a=-1.0), ["classify", "search"], {"m_star": 10}),
    "ref2-rational": ("Rational modulus theta = 1/2 with |ab| = 1, mu = 1e-3",
                      ref2(mu=1e-3), ["classify"], {}),
    "ref-sf": ("Saddle-focus cycle: homoclinic k-sequence", ref_sf(), ["classify", "search"], {}),
    "ref-df": ("Double-focus cycle: homoclinic m-sequence", ref_df(), ["classify", "search"], {}),
}

if __name__ == "__main__":
    OUT.mkdir(parents=True, exist_ok=True)
    for name, (desc, params, actions, options) in PRESETS.items():
        doc = {"name": name, "description": desc, "params": params.to_dict(), "actions": actions,
               "options": options}
        (OUT / f"{name}.json").write_text(json.dumps(doc, indent=2) + "\n")
        print(name)
