"""
Summary Page

Measured grid next to the published reference values, the nearest-centroid
baseline, and per-fold rows.
"""

import os

import streamlit as st

import utilities.report as report

# ============================================================================
# Page Header
# ============================================================================

st.title("Summary")
st.caption("Aggregate accuracy / TPR / TNR / PPV per reducer x classifier cell (percent)")

report_dir = st.session_state.get("app.report_dir", "report")

# ============================================================================
# Check Prerequisites
# ============================================================================

summary = report.load_summary(report_dir)
if not summary:
    st.warning(f"No summary found in `{report_dir}`. Run `python opclass.py run configs/synth.toml` first.")
    st.stop()

provenance = report.read_provenance(os.path.join(report_dir, report.SUMMARY_FILE))
col1, col2, col3 = st.columns(3)
with col1:
    st.metric("Grid cells", len(summary))
with col2:
    st.metric("Config hash", provenance.get("config_hash", "?"))
with col3:
    st.metric("Master seed", provenance.get("master_seed", "?"))

# ============================================================================
# Measured vs Reference
# ============================================================================

st.subheader("Measured")
st.dataframe(summary, use_container_width=True, hide_index=True)

metric = st.selectbox("Compare metric", ["accuracy", "tpr", "tnr", "ppv"])
reference = {(r["features"], r["classifier"]): r for r in report.load_reference(report_dir)}
comparison = []
for row in summary:
    ref = reference.get((row["features"], row["classifier"]))
    comparison.append({
        "features": row["features"],
        "classifier": row["classifier"],
        "measured": float(row[metric]),
        "reference": float(ref[metric]) if ref else None,
    })

st.subheader("Measured vs reference")
st.caption("Reference values come from the original corpus, which is no longer distributed; annotation only.")
st.dataframe(comparison, use_container_width=True, hide_index=True)

# ============================================================================
# Baseline and folds
# ============================================================================

baseline = report.load_baseline(report_dir)
if baseline:
    st.subheader("Nearest-centroid baseline")
    st.dataframe(baseline, use_container_width=True, hide_index=True)

with st.expander("Per-fold rows"):
    st.dataframe(report.load_folds(report_dir), use_container_width=True, hide_index=True)
