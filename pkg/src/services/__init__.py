"""Control-plane services: distributed DF election and the SDN controller."""
