"""Endpoint naming conventions for the simulated federation."""

CLOUD = "cloud"


def enb(net: str) -> str:
    return f"enb.{net}"


def mme(net: str) -> str:
    return f"mme.{net}"


def hss(net: str) -> str:
    return f"hss.{net}"


def mecmgr(net: str) -> str:
    return f"mecmgr.{net}"


def oidc(net: str) -> str:
    return f"oidc.{net}"


def ams(net: str) -> str:
    return f"ams.{net}"


def amc(net: str) -> str:
    return f"amc.{net}"


def proxy(net: str) -> str:
    return f"proxy.{net}"


def platform(net: str) -> str:
    return f"mec.{net}"


def app(app_id: str, net: str) -> str:
    return f"app.{app_id}.{net}"


def ue(imsi: str) -> str:
    return f"ue.{imsi}"


def network_of(name: str) -> str:
    """Network id of an infrastructure endpoint name (last dotted part)."""
    return name.rsplit(".", 1)[-1]
