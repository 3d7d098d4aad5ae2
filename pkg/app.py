import logging

import streamlit as st

from cli import LOG_FORMAT, resolve_settings
from proximity_network_page import proximity_network_page
from single_series_page import single_series_page

# 設置日誌
logging.basicConfig(level=logging.INFO, format=LOG_FORMAT)


def main():
    st.set_page_config(page_title="時間序列網路工具", layout="wide")
    settings = resolve_settings(create_missing=True)
    logging.getLogger().setLevel(settings.log_level)

    st.sidebar.title("時間序列網路工具")

    page = st.sidebar.radio("選擇功能",
                            ("多序列鄰近網路", "單序列網路"),
                            captions=["距離矩陣 → k-NN / ε-NN / 加權網路",
                                      "可見圖、轉移、遞歸與視窗網路"])

    if page == "多序列鄰近網路":
        proximity_network_page()
    elif page == "單序列網路":
        single_series_page()

    st.sidebar.markdown("---")
    st.sidebar.info(f"平行執行緒數：{settings.workers}　輸出格式：{settings.format}")


if __name__ == "__main__":
    main()
