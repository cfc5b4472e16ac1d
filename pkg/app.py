"""
Opcode Classifier Report Viewer - Main Application Entry Point

A multi-page Streamlit application for browsing a finished evaluation run
(summary grid, per-fold rows, loss traces). Read-only over the report
directory written by `python opclass.py run` or `evaluate`.

Run with:
    streamlit run app.py
"""

import streamlit as st

import config

# ============================================================================
# Configuration
# ============================================================================

PAGE_TITLE = "Opcode Classifier Reports"
PAGE_ICON = "🧬"

# ============================================================================
# Page Setup (runs once at app start)
# ============================================================================

st.set_page_config(
    page_title=PAGE_TITLE,
    page_icon=PAGE_ICON,
    layout="wide",
    initial_sidebar_state="expanded"
)

# ============================================================================
# Shared State Initialization
# ============================================================================

if "app.report_dir" not in st.session_state:
    st.session_state["app.report_dir"] = config.REPORT_DIR

with st.sidebar:
    st.session_state["app.report_dir"] = st.text_input(
        "Report directory",
        value=st.session_state["app.report_dir"],
        help="Directory written by `opclass run` / `opclass evaluate`"
    )

# ============================================================================
# Multi-Page Navigation Setup
# ============================================================================

summary_page = st.Page("pages/summary.py", title="Summary", icon="📊")
traces_page = st.Page("pages/traces.py", title="Loss Traces", icon="📉")

pg = st.navigation([
    summary_page,
    traces_page,
])

pg.run()
