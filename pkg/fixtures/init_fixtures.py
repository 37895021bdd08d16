"""
Fixture initialization script
Run this to create the sample cohort and incidence series for the mini taxonomy
"""
import math
import sys
from pathlib import Path

# Add project root to Python path
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from claimsrisk.data.cohort import write_cohort
from claimsrisk.data.models import GeneratorSpec
from claimsrisk.data.taxonomy import load_taxonomy
from claimsrisk.synth.generator import generate_cohort, generate_incidence_series

FIXTURES = Path(__file__).parent

SAMPLE_SPEC = GeneratorSpec(
    n_persons=2000,
    leaf_prevalence=0.08,
    intercept=math.log(0.04 / 0.96),
    age_effect=0.03,
    age_correlation=1.0,
    planted={
        "ICD:I20-I25": 0.8,
        "ICD:I25.22": 0.6,
        "ATC:A10": 0.5,
        "OPS:8-98f": 1.0,
        "nursing_home=1": 1.1,
    },
    seed=2020,
)


def init_fixtures(target_dir=FIXTURES, spec: GeneratorSpec = SAMPLE_SPEC) -> dict:
    """Write mini_cohort.jsonl, mini_truth.csv and mini_incidence.csv"""
    target = Path(target_dir)
    target.mkdir(parents=True, exist_ok=True)

    print(f"Loading taxonomy from {FIXTURES / 'mini_taxonomy.tsv'}")
    taxonomy = load_taxonomy(FIXTURES / "mini_taxonomy.tsv")

    print("Generating cohort...")
    cohort, truth = generate_cohort(taxonomy, spec, spec.seed)
    write_cohort(cohort, target / "mini_cohort.jsonl")
    truth.to_csv(target / "mini_truth.csv", index=False, lineterminator="\n")

    print("Generating incidence series...")
    generate_incidence_series(spec, spec.seed).to_csv(
        target / "mini_incidence.csv", index=False, lineterminator="\n"
    )

    counts = {o: int(cohort.outcome(o).sum()) for o in ("y1", "y2", "y3")}
    print(f"\nFixtures written to {target}")
    print(f"   Nodes: {len(taxonomy)}")
    print(f"   Persons: {len(cohort)}")
    print(f"   Outcomes: {counts}")
    return {"nodes": len(taxonomy), "persons": len(cohort), "outcomes": counts}


if __name__ == "__main__":
    init_fixtures()
