"""
Loss Traces Page

Per-epoch train/validation loss for every autoencoder and DNN fit.
"""

import streamlit as st

import utilities.report as report

st.title("Loss Traces")
st.caption("Train and validation loss per epoch (dropout off when measuring)")

report_dir = st.session_state.get("app.report_dir", "report")

names = report.list_traces(report_dir)
if not names:
    st.info(f"No trace files under `{report_dir}/{report.TRACE_DIR}`.")
    st.stop()

selected = st.multiselect("Traces", names, default=names[:1])

for name in selected:
    trace = report.load_trace(report_dir, name)
    st.subheader(name.removesuffix(".csv").replace("__", " / "))
    st.line_chart(
        {"train_loss": trace["train_loss"], "val_loss": trace["val_loss"]},
        x_label="epoch",
        y_label="loss",
    )
    if trace["train_loss"] and trace["train_loss"][0] > 0:
        first, last = trace["train_loss"][0], trace["train_loss"][-1]
        st.caption(f"train loss {first:.5f} -> {last:.5f} ({last / first:.2%} of first epoch)")
