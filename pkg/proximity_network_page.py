import logging
import os
import tempfile
from pathlib import Path

import pandas as pd
import streamlit as st

from cli import resolve_settings
from dist_matrix import ts_dist
from distances import EVENT_KERNELS, EsParams, SignificanceSpec, VrParams, make_kernel
from errors import SeriesNetError
from graph_io_analysis import girvan_newman, graph_stats, write_network
from net_build import Network, make_builder
from series_core import BIN_RULES, load_series

logger = logging.getLogger(__name__)

# 常量
METRIC_NAMES = {
    "cor": "皮爾森相關 (cor)",
    "ccf": "交叉相關 (ccf)",
    "dtw": "動態時間規整 (dtw)",
    "nmi": "標準化互資訊 (nmi)",
    "voi": "資訊變異 (voi)",
    "es": "事件同步 (es)",
    "vr": "van Rossum (vr)",
}
BUILDER_NAMES = {"enn": "ε-NN", "knn": "k-NN", "weighted": "加權網路"}


def init_session_state():
    if 'proximity_result' not in st.session_state:
        st.session_state.proximity_result = None


def save_upload(uploaded_file) -> str:
    with tempfile.NamedTemporaryFile(delete=False, suffix=os.path.splitext(uploaded_file.name)[1]) as temp_file:
        temp_file.write(uploaded_file.getvalue())
        return temp_file.name


def network_bytes(net: Network, output_format: str) -> bytes:
    suffix = ".graphml" if output_format == "graphml" else ".tsv"
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / f"network{suffix}"
        write_network(net, path, output_format)
        return path.read_bytes()


def show_network(net: Network, output_format: str, file_stem: str):
    stats = graph_stats(net)
    col1, col2, col3, col4 = st.columns(4)
    col1.metric("節點", stats.n)
    col2.metric("邊", stats.m)
    col3.metric("密度", f"{stats.density:.3f}")
    col4.metric("連通分量", stats.components)

    if not net.directed:
        partition = girvan_newman(net)
        st.write(f"clustering edge betweenness, groups: {partition.groups}, mod: {partition.modularity:.2f}")
        with st.expander("社群成員"):
            for cid, members in enumerate(partition.communities, start=1):
                st.write(f"[{cid}] {' '.join(members)}")

    extension = "graphml" if output_format == "graphml" else "tsv"
    st.download_button(
        "下載網路檔案",
        data=network_bytes(net, output_format),
        file_name=f"{file_stem}.{extension}",
        mime="text/plain",
    )


def metric_inputs(metric: str, alpha: float) -> dict:
    """Widgets for one kernel's parameters; returns make_kernel keyword arguments."""
    params = {}
    if metric in ("cor", "ccf"):
        params["mode"] = st.selectbox("相關方向", ["abs", "pos", "neg"])
        if metric == "ccf":
            params["tau_max"] = int(st.number_input("最大延遲", min_value=0, value=0))
        if st.checkbox("只保留顯著相關（Fisher z）"):
            params["sig"] = SignificanceSpec(alpha=alpha, method="fisher_z")
    elif metric in ("nmi", "voi"):
        params["rule"] = st.selectbox("分箱規則", BIN_RULES)
        if metric == "nmi":
            params["norm"] = st.selectbox("標準化方式", ["sqrt", "half_sum", "min", "max"])
    elif metric in EVENT_KERNELS:
        params["event_percentile"] = st.slider("事件比例（最高值）", 0.01, 0.5, 0.1)
        tau = st.number_input("τ", min_value=0.1, value=1.0)
        params["params"] = EsParams(tau=tau) if metric == "es" else VrParams(tau=tau)
    return params


def builder_inputs(builder: str) -> dict:
    if builder == "knn":
        return {"k": int(st.number_input("k", min_value=1, value=1))}
    if builder == "enn":
        return {"eps_percentile": st.slider("ε 取距離的百分位", 0.01, 0.99, 0.3)}
    return {"normalize": True}


def proximity_network_page():
    init_session_state()
    st.title("🕸️ 多序列鄰近網路")
    st.write("上傳多條時間序列，計算兩兩距離，再建立 k-NN、ε-NN 或加權網路。")

    settings = resolve_settings()
    uploaded_file = st.file_uploader("上傳 CSV（每欄一條時間序列，可含 t 欄）", type=["csv"])

    col1, col2 = st.columns(2)
    with col1:
        metric = st.selectbox("距離函數", list(METRIC_NAMES), format_func=METRIC_NAMES.get)
        metric_params = metric_inputs(metric, settings.alpha)
    with col2:
        builder = st.selectbox("網路類型", list(BUILDER_NAMES), format_func=BUILDER_NAMES.get)
        builder_params = builder_inputs(builder)
        workers = int(st.number_input("平行執行緒數", min_value=1, value=settings.workers))
        output_format = st.selectbox("輸出格式", ["edgelist", "graphml"],
                                     index=0 if settings.format == "edgelist" else 1)

    if uploaded_file is not None and st.button("建立網路"):
        temp_file_name = save_upload(uploaded_file)
        try:
            series = load_series(temp_file_name)
            with st.spinner("計算距離矩陣中..."):
                kernel = make_kernel(metric, **metric_params)
                D = ts_dist(series, kernel, workers=workers)
            net = make_builder(builder, **builder_params)(D)
            st.session_state.proximity_result = (D, net, os.path.splitext(uploaded_file.name)[0])
            st.success("網路已建立！")
        except (SeriesNetError, ValueError) as e:
            logger.error(f"proximity network failed: {e}")
            st.error(f"建立網路時出錯: {str(e)}")
        finally:
            os.unlink(temp_file_name)

    if st.session_state.proximity_result is not None:
        D, net, stem = st.session_state.proximity_result
        with st.expander("距離矩陣"):
            st.dataframe(pd.DataFrame(D.values, index=D.labels, columns=D.labels))
        show_network(net, output_format, f"{stem}_{builder}")


if __name__ == "__main__":
    proximity_network_page()
