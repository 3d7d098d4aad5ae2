import logging
import os

import streamlit as st

from cli import resolve_settings
from distances import make_kernel
from errors import SeriesNetError
from net_build import make_builder
from proximity_network_page import save_upload, show_network
from series_core import read_series_csv
from single_series_nets import EmbeddingSpec, tsnet_qn, tsnet_rn, tsnet_vg, tsnet_windows

logger = logging.getLogger(__name__)

# 常量
NETWORK_TYPES = {
    "vg": "可見圖 (visibility graph)",
    "qn": "轉移網路 (transition network)",
    "rn": "遞歸網路 (recurrence network)",
    "windows": "視窗鄰近網路 (window network)",
}


def init_session_state():
    if 'single_result' not in st.session_state:
        st.session_state.single_result = None


def network_inputs(kind: str) -> dict:
    if kind == "vg":
        return {
            "kind": st.radio("可見性", ["natural", "horizontal"], horizontal=True),
            "directed": st.checkbox("有向（由早到晚）"),
            "algorithm": st.selectbox("演算法", ["naive", "divide_conquer"]),
        }
    if kind == "qn":
        return {"breaks": int(st.number_input("分箱數", min_value=2, value=10))}
    if kind == "rn":
        return {
            "m": int(st.number_input("嵌入維度 m", min_value=1, value=1)),
            "tau_embed": int(st.number_input("延遲 τ", min_value=1, value=1)),
            "metric": st.selectbox("距離", ["euclidean", "manhattan", "chebyshev"]),
            "radius": st.number_input("半徑 ε", min_value=0.001, value=0.5),
        }
    return {
        "width": int(st.number_input("視窗寬度", min_value=2, value=12)),
        "step": int(st.number_input("步長", min_value=1, value=1)),
        "mode": st.selectbox("相關方向", ["pos", "abs", "neg"]),
        "eps": st.number_input("ε（距離上限）", min_value=0.0, value=0.25),
    }


def build_single_network(series, kind: str, params: dict, workers: int):
    if kind == "vg":
        return tsnet_vg(series, **params)
    if kind == "qn":
        return tsnet_qn(series, params["breaks"])
    if kind == "rn":
        return tsnet_rn(series, EmbeddingSpec(**params))
    kernel = make_kernel("cor", mode=params["mode"])
    return tsnet_windows(series, params["width"], params["step"], kernel,
                         make_builder("enn", eps=params["eps"]), workers=workers)


def single_series_page():
    init_session_state()
    st.title("📈 單序列網路")
    st.write("把一條時間序列轉成可見圖、轉移網路、遞歸網路或視窗鄰近網路。")

    settings = resolve_settings()
    uploaded_file = st.file_uploader("上傳 CSV 時間序列", type=["csv"])
    kind = st.selectbox("網路類型", list(NETWORK_TYPES), format_func=NETWORK_TYPES.get)
    params = network_inputs(kind)
    output_format = st.selectbox("輸出格式", ["edgelist", "graphml"],
                                 index=0 if settings.format == "edgelist" else 1)

    if uploaded_file is not None:
        temp_file_name = save_upload(uploaded_file)
        try:
            series_list = read_series_csv(temp_file_name)
        except SeriesNetError as e:
            st.error(f"讀取檔案時出錯: {str(e)}")
            return
        finally:
            os.unlink(temp_file_name)

        column = st.selectbox("選擇序列", [s.id for s in series_list])
        series = next(s for s in series_list if s.id == column)
        st.line_chart(series.values)

        if st.button("建立網路"):
            try:
                with st.spinner("建立網路中..."):
                    net = build_single_network(series, kind, params, settings.workers)
                st.session_state.single_result = (net, f"{series.id}_{kind}")
                st.success("網路已建立！")
            except (SeriesNetError, ValueError) as e:
                logger.error(f"single-series network failed: {e}")
                st.error(f"建立網路時出錯: {str(e)}")

    if st.session_state.single_result is not None:
        net, stem = st.session_state.single_result
        show_network(net, output_format, stem)


if __name__ == "__main__":
    single_series_page()
